#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "gp_cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result gp(std::initializer_list<std::string> args) {
  std::vector<std::string> storage{"gp"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : storage) argv.push_back(s.c_str());
  std::ostringstream out, err;
  const int code = gpcli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("gp_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, SimulateIsByteIdenticalForAFixedSeed) {
  ASSERT_EQ(gp({"simulate", "--n", "300", "--seed", "11", "--out", path("a.csv")}).code, 0);
  ASSERT_EQ(gp({"simulate", "--n", "300", "--seed", "11", "--out", path("b.csv")}).code, 0);
  ASSERT_EQ(gp({"simulate", "--n", "300", "--seed", "12", "--out", path("c.csv")}).code, 0);
  EXPECT_EQ(slurp(path("a.csv")), slurp(path("b.csv")));
  EXPECT_NE(slurp(path("a.csv")), slurp(path("c.csv")));
  EXPECT_EQ(count_lines(path("a.csv")), 301u);
  EXPECT_TRUE(fs::exists(path("a.json")));
}

TEST_F(Cli, SimulatedDatasetRoundTrips) {
  ASSERT_EQ(gp({"simulate", "--n", "50", "--dim", "3", "--out", path("d.csv")}).code, 0);
  const auto ds = gpcli::read_dataset(path("d.csv"));
  EXPECT_EQ(ds.points.size(), 50u);
  EXPECT_EQ(ds.points.dim(), 3u);
  EXPECT_EQ(slurp(path("d.csv")).substr(0, 15), "x1,x2,x3,value\n");
}

TEST_F(Cli, CorruptCsvIsAnInputError) {
  std::ofstream(path("bad.csv")) << "x1,x2,value\n1,2,3\n4,5\n";
  const auto r = gp({"fit", "--data", path("bad.csv"), "--out", path("f.json")});
  EXPECT_EQ(r.code, gpcli::kInputError);
  EXPECT_NE(r.err.find(":3:"), std::string::npos) << r.err;

  std::ofstream(path("nan.csv")) << "x1,x2,value\n1,2,nan\n";
  EXPECT_EQ(gp({"fit", "--data", path("nan.csv"), "--out", path("f.json")}).code, gpcli::kInputError);

  std::ofstream(path("hdr.csv")) << "a,b,value\n1,2,3\n";
  EXPECT_EQ(gp({"fit", "--data", path("hdr.csv"), "--out", path("f.json")}).code, gpcli::kInputError);
}

TEST_F(Cli, BadArgumentsAreInputErrors) {
  EXPECT_EQ(gp({"fit", "--data", path("missing.csv"), "--out", path("f.json")}).code, gpcli::kInputError);
  EXPECT_EQ(gp({"simulate", "--n", "10", "--out", path("nodir/x.csv")}).code, gpcli::kInputError);
  EXPECT_EQ(gp({"simulate", "--n", "10", "--kernel", "gauss", "--out", path("x.csv")}).code, gpcli::kInputError);
  EXPECT_EQ(gp({"simulate", "--n", "10", "--theta0", "-1", "--out", path("x.csv")}).code, gpcli::kInputError);
  EXPECT_EQ(gp({"simulate", "--n", "100", "--dense-cap", "50", "--out", path("x.csv")}).code, gpcli::kInputError);
  EXPECT_EQ(gp({"simulate", "--n", "10", "--level", "two", "--out", path("x.csv")}).code, gpcli::kInputError);
  EXPECT_EQ(gp({"bogus"}).code, gpcli::kInputError);
  EXPECT_EQ(gp({}).code, gpcli::kInputError);
}

TEST_F(Cli, VersionFlag) {
  const auto r = gp({"--version"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find(gphodlr::kVersion), std::string::npos);
}

TEST_F(Cli, FitReportHasEstimatesIntervalsAndConfig) {
  ASSERT_EQ(gp({"simulate", "--n", "512", "--theta0", "3", "--theta1", "5", "--seed", "3", "--out", path("d.csv")}).code,
            0);
  const auto r = gp({"fit", "--data", path("d.csv"), "--theta-init", "2", "2", "--exact", "--out", path("fit.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(path("fit.json")));
  EXPECT_EQ(j["version"], gphodlr::kVersion);
  EXPECT_EQ(j["n"], 512);
  EXPECT_EQ(j["config"]["method"], "trust_region");
  EXPECT_EQ(j["config"]["rank"], 72);
  for (const char* key : {"hodlr_fit", "exact_fit"}) {
    const auto& f = j[key];
    ASSERT_EQ(f["theta_hat"].size(), 2u);
    EXPECT_EQ(f["status"], "converged");
    EXPECT_GT(f["iterations"].get<int>(), 0);
    ASSERT_TRUE(f["confidence"]["available"].get<bool>());
    for (int p = 0; p < 2; ++p) {
      const double t = f["theta_hat"][p];
      EXPECT_LT(f["confidence"]["ci_lower"][p].get<double>(), t);
      EXPECT_GT(f["confidence"]["ci_upper"][p].get<double>(), t);
    }
    EXPECT_EQ(f["confidence"]["ellipses"].size(), 1u);
  }
  EXPECT_TRUE(j["hodlr_fit"]["timings"].contains("assemble_factor"));
  EXPECT_TRUE(j["hodlr_fit"]["timings"].contains("total"));
  EXPECT_LT(j["comparison"]["in_standard_errors"][0].get<double>(), 2.0);
  EXPECT_LT(j["comparison"]["in_standard_errors"][1].get<double>(), 2.0);
}

TEST_F(Cli, NonConvergenceExitsWithOne) {
  ASSERT_EQ(gp({"simulate", "--n", "256", "--out", path("d.csv")}).code, 0);
  const auto r = gp({"fit", "--data", path("d.csv"), "--theta-init", "0.2", "50", "--max-iters", "1", "--out",
                     path("f.json")});
  EXPECT_EQ(r.code, gpcli::kNotConverged);
  EXPECT_TRUE(fs::exists(path("f.json")));
}

TEST_F(Cli, EnvironmentOverridesDefaults) {
  ::setenv("GPHODLR_SEED", "11", 1);
  const int a = gp({"simulate", "--n", "64", "--out", path("env.csv")}).code;
  ::unsetenv("GPHODLR_SEED");
  ASSERT_EQ(a, 0);
  ASSERT_EQ(gp({"simulate", "--n", "64", "--seed", "11", "--out", path("flag.csv")}).code, 0);
  EXPECT_EQ(slurp(path("env.csv")), slurp(path("flag.csv")));
}

TEST_F(Cli, TraceExperimentRowCount) {
  const auto r = gp({"trace-experiment", "--n", "256", "--nh-grid", "2", "4", "8", "--replicates", "5", "--out",
                     path("t.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(path("t.csv")), 1u + 3u * 4u);
}

TEST_F(Cli, SurfaceRowCountAndArgmin) {
  ASSERT_EQ(gp({"simulate", "--n", "512", "--theta0", "3", "--theta1", "5", "--out", path("d.csv")}).code, 0);
  const auto r = gp({"surface", "--data", path("d.csv"), "--levels", "1", "2", "--ranks", "16", "32", "--theta0-grid",
                     "2:4:3", "--theta1-grid", "3:7:4", "--out", path("s.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(path("s.csv")), 1u + 2u * 2u * 3u * 4u);
  const auto j = nlohmann::json::parse(slurp(path("s.json")));
  ASSERT_EQ(j["argmins"].size(), 4u);
  for (const auto& a : j["argmins"]) {
    EXPECT_TRUE(a.contains("theta0"));
    EXPECT_TRUE(a.contains("theta1"));
  }
}

TEST_F(Cli, BenchmarkColumns) {
  const auto r = gp({"benchmark", "--sizes", "256", "512", "--ranks", "16", "--exact-max", "256", "--repeats", "1",
                     "--out", path("b.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("b.csv")).substr(0, 18), "n,rank,op,seconds\n");
  EXPECT_EQ(count_lines(path("b.csv")), 1u + 3u * 2u + 3u);
  EXPECT_EQ(gp({"benchmark", "--sizes", "512", "256", "--out", path("c.csv")}).code, gpcli::kInputError);
}

TEST_F(Cli, EstimatesFallInTheJointRegionOfTheTruth) {
  const Eigen::Vector2d truth(3.0, 5.0);
  for (int seed = 1; seed <= 5; ++seed) {
    const std::string s = std::to_string(seed);
    const std::string data = path("d" + s + ".csv");
    ASSERT_EQ(gp({"simulate", "--n", "2048", "--theta0", "3", "--theta1", "5", "--seed", s, "--out", data}).code, 0);
    std::vector<std::string> args{"fit", "--data", data, "--seed", s, "--out", path("f" + s + ".json")};
    if (seed == 1) args.push_back("--exact");
    std::vector<const char*> argv{"gp"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    ASSERT_EQ(gpcli::run(static_cast<int>(argv.size()), argv.data(), out, err), 0) << err.str();

    const auto j = nlohmann::json::parse(slurp(path("f" + s + ".json")));
    const auto& f = j["hodlr_fit"];
    const Eigen::Vector2d hat(f["theta_hat"][0].get<double>(), f["theta_hat"][1].get<double>());
    Eigen::Matrix2d fisher;
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) fisher(a, b) = f["fisher_hat"][a][b].get<double>();
    }
    const Eigen::Vector2d d = hat - truth;
    EXPECT_LE(d.dot(fisher * d), gphodlr::kChi2Two95) << "seed " << seed << " theta_hat " << hat.transpose();
    if (seed == 1) {
      EXPECT_LE(j["comparison"]["in_standard_errors"][0].get<double>(), 2.0);
      EXPECT_LE(j["comparison"]["in_standard_errors"][1].get<double>(), 2.0);
    }
  }
}
