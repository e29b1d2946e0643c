#pragma once

// Command implementations for the `gp` tool. Kept in a header so the tests
// can drive the commands in-process.

#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Core>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gphodlr/gphodlr.hpp"

namespace gpcli {

using nlohmann::json;

enum ExitCode : int { kOk = 0, kNotConverged = 1, kInputError = 2, kNumericalFailure = 3 };

// ---------------------------------------------------------------------------
// Datasets

struct Dataset {
  gphodlr::PointSet points;
  Eigen::VectorXd values;
};

class FileError : public gphodlr::InvalidInput {
 public:
  using gphodlr::InvalidInput::InvalidInput;
};

inline double parse_double(std::string_view s, const std::string& where) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw gphodlr::InvalidInput(where + ": cannot parse '" + std::string(s) + "' as a number");
  }
  if (!std::isfinite(v)) throw gphodlr::InvalidInput(where + ": value is not finite");
  return v;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

/// CSV with header x1,...,xd,value.
inline Dataset read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open dataset '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw gphodlr::InvalidInput(path + ":1: empty file, expected a header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);
  const std::size_t d = header.size() - 1;
  if (header.size() < 2) throw gphodlr::InvalidInput(path + ":1: header needs x1,...,xd,value");
  for (std::size_t i = 0; i < d; ++i) {
    if (header[i] != "x" + std::to_string(i + 1)) {
      throw gphodlr::InvalidInput(path + ":1: column " + std::to_string(i + 1) + " must be named x" +
                                  std::to_string(i + 1));
    }
  }
  if (header[d] != "value") throw gphodlr::InvalidInput(path + ":1: last column must be named value");

  std::vector<double> coords;
  std::vector<double> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    const std::string where = path + ":" + std::to_string(line_no);
    if (cells.size() != d + 1) {
      throw gphodlr::InvalidInput(where + ": expected " + std::to_string(d + 1) + " columns, found " +
                                  std::to_string(cells.size()));
    }
    for (std::size_t i = 0; i < d; ++i) coords.push_back(parse_double(cells[i], where));
    values.push_back(parse_double(cells[d], where));
  }
  if (values.empty()) throw gphodlr::InvalidInput(path + ": no observations");
  Dataset ds;
  ds.points = gphodlr::PointSet(Eigen::Map<const Eigen::MatrixXd>(
      coords.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(values.size())));
  ds.values = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  return ds;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ofstream open_output(const std::string& path) {
  const std::filesystem::path p(path);
  if (p.has_parent_path() && !std::filesystem::is_directory(p.parent_path())) {
    throw FileError("output directory '" + p.parent_path().string() + "' does not exist");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write '" + path + "'");
  return out;
}

inline void write_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out = open_output(path);
  const std::size_t d = ds.points.dim();
  for (std::size_t i = 0; i < d; ++i) out << 'x' << (i + 1) << ',';
  out << "value\n";
  for (std::size_t k = 0; k < ds.points.size(); ++k) {
    for (std::size_t i = 0; i < d; ++i) out << format_double(ds.points.coords()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k))) << ',';
    out << format_double(ds.values(static_cast<Eigen::Index>(k))) << '\n';
  }
}

inline void write_json(const std::string& path, const json& j) {
  std::ofstream out = open_output(path);
  out << j.dump(2) << '\n';
}

inline std::string sidecar_path(const std::string& path) {
  std::filesystem::path p(path);
  p.replace_extension(".json");
  return p.string();
}

inline json to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    rows.push_back(to_json(Eigen::VectorXd(m.row(i).transpose())));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Configuration shared by the commands

struct CommonOptions {
  std::string kernel = "matern_alt";
  double nu = 1.0;
  std::size_t rank = gphodlr::kDefaultRank;
  std::string level = "auto";
  std::size_t nhutch = gphodlr::kDefaultSaaCount;
  std::uint64_t seed = 1;
  int threads = 0;  // 0 = library default
  std::size_t dense_cap = gphodlr::kDefaultDenseCap;
  std::string out;

  gphodlr::CovarianceModel model(bool nugget = false) const {
    return gphodlr::CovarianceModel(gphodlr::parse_kernel_id(kernel), nu, nugget);
  }

  gphodlr::HodlrOptions hodlr() const {
    gphodlr::HodlrOptions o;
    o.rank = rank;
    if (level != "auto") {
      std::size_t v = 0;
      const auto [ptr, ec] = std::from_chars(level.data(), level.data() + level.size(), v);
      if (ec != std::errc() || ptr != level.data() + level.size()) {
        throw gphodlr::InvalidInput("--level must be a non-negative integer or 'auto'");
      }
      o.level = v;
    }
    return o;
  }

  void validate() const {
    (void)model();
    (void)hodlr();
    if (rank < 1) throw gphodlr::InvalidInput("--rank must be >= 1");
    if (nhutch < 1) throw gphodlr::InvalidInput("--nhutch must be >= 1");
    if (threads < 0) throw gphodlr::InvalidInput("--threads must be >= 0");
    if (out.empty()) throw gphodlr::InvalidInput("--out is required");
  }

  json to_json() const {
    return {{"kernel", kernel}, {"nu", nu},         {"rank", rank},           {"level", level},
            {"nhutch", nhutch}, {"seed", seed},     {"threads", threads},     {"dense_cap", dense_cap},
            {"out", out}};
  }
};

inline void add_common(CLI::App& app, CommonOptions& c) {
  app.add_option("--kernel", c.kernel, "Covariance: matern_standard or matern_alt")->envname("GPHODLR_KERNEL");
  app.add_option("--nu", c.nu, "Fixed Matern smoothness")->envname("GPHODLR_NU");
  app.add_option("--rank", c.rank, "Off-diagonal rank p")->envname("GPHODLR_RANK");
  app.add_option("--level", c.level, "HODLR level, or 'auto' for floor(log2 n) - 8")->envname("GPHODLR_LEVEL");
  app.add_option("--nhutch", c.nhutch, "Number of SAA probe vectors N_h")->envname("GPHODLR_NHUTCH");
  app.add_option("--seed", c.seed, "Random seed")->envname("GPHODLR_SEED");
  app.add_option("--threads", c.threads, "Worker threads (0 = default)")->envname("GPHODLR_THREADS");
  app.add_option("--dense-cap", c.dense_cap, "Largest n for dense computations")->envname("GPHODLR_DENSE_CAP");
  app.add_option("--out", c.out, "Output path")->envname("GPHODLR_OUT");
}

inline json header(const std::string& command, const CommonOptions& c) {
  return {{"tool", "gp"}, {"version", gphodlr::kVersion}, {"command", command}, {"config", c.to_json()}};
}

inline std::vector<double> parse_grid(const std::string& spec, const std::string& flag) {
  // lo:hi:count
  const auto parts = [&] {
    std::vector<std::string_view> out;
    std::string_view s(spec);
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
      if (i == s.size() || s[i] == ':') {
        out.push_back(s.substr(start, i - start));
        start = i + 1;
      }
    }
    return out;
  }();
  if (parts.size() != 3) throw gphodlr::InvalidInput(flag + " must look like lo:hi:count");
  const double lo = parse_double(parts[0], flag);
  const double hi = parse_double(parts[1], flag);
  const double count = parse_double(parts[2], flag);
  if (!(count >= 1.0) || count != std::floor(count) || !(hi >= lo)) {
    throw gphodlr::InvalidInput(flag + ": need hi >= lo and an integer count >= 1");
  }
  const Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(count), lo, hi);
  return {v.data(), v.data() + v.size()};
}

// ---------------------------------------------------------------------------
// Commands

struct SimulateOptions {
  std::size_t n = 2048;
  std::size_t dim = 2;
  double side = 100.0;
  double theta0 = 3.0;
  double theta1 = 5.0;
  std::optional<double> nugget;
};

inline int cmd_simulate(const CommonOptions& c, const SimulateOptions& s, std::ostream& log) {
  c.validate();
  gphodlr::ParameterVector pv{s.theta0, s.theta1, c.nu, s.nugget};
  pv.validate();
  if (s.n > c.dense_cap) {
    throw gphodlr::CapExceeded("simulate: n (raise --dense-cap to allow larger dense simulation)", s.n,
                               c.dense_cap);
  }
  const auto model = c.model(s.nugget.has_value());
  Dataset ds;
  ds.points = gphodlr::random_locations(s.n, s.dim, s.side, c.seed);
  // Separate stream for the field so locations and values are independent.
  ds.values = gphodlr::simulate_gp(model, pv.estimable(), ds.points, gphodlr::splitmix64(c.seed ^ 0x5eed), c.dense_cap);
  write_dataset(c.out, ds);
  json meta = header("simulate", c);
  meta["theta_true"] = to_json(pv.estimable());
  meta["n"] = s.n;
  meta["dim"] = s.dim;
  meta["domain_side"] = s.side;
  meta["normal_generator"] = gphodlr::NormalGenerator::algorithm;
  write_json(sidecar_path(c.out), meta);
  log << "wrote " << s.n << " observations to " << c.out << "\n";
  return kOk;
}

struct FitOptions {
  std::string data;
  std::vector<double> theta_init{2.0, 2.0};
  std::string method = "trust_region";
  double rel_tol = 1e-8;
  int max_iters = 200;
  double initial_radius = 1.0;
  bool exact = false;
};

inline json report_json(const gphodlr::MLEReport& r) {
  json j;
  j["theta_hat"] = to_json(r.theta_hat);
  j["objective"] = r.objective;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["status"] = r.status;
  j["evaluations"] = {{"value", r.value_evals},
                      {"gradient", r.gradient_evals},
                      {"hessian", r.hessian_evals},
                      {"failed", r.failed_evals}};
  j["fisher_hat"] = to_json(r.fisher_hat);
  json conf;
  conf["available"] = r.confidence.available;
  if (!r.confidence.note.empty()) conf["note"] = r.confidence.note;
  if (r.confidence.available) {
    conf["level"] = 0.95;
    conf["std_errors"] = to_json(r.confidence.std_errors);
    conf["ci_lower"] = to_json(r.confidence.ci_lower);
    conf["ci_upper"] = to_json(r.confidence.ci_upper);
    json ellipses = json::array();
    for (const auto& e : r.confidence.ellipses) {
      json pts = json::array();
      for (const auto& p : e.boundary) pts.push_back({p(0), p(1)});
      ellipses.push_back({{"params", {e.i, e.j}},
                          {"center", {e.center(0), e.center(1)}},
                          {"covariance", to_json(Eigen::MatrixXd(e.covariance))},
                          {"chi2", e.chi2},
                          {"boundary", pts}});
    }
    conf["ellipses"] = ellipses;
  }
  j["confidence"] = conf;
  json trace = json::array();
  for (const auto& t : r.trace) {
    trace.push_back({{"iteration", t.iteration},
                     {"theta", to_json(t.theta)},
                     {"objective", t.objective},
                     {"radius", t.radius},
                     {"used_fisher", t.used_fisher}});
  }
  j["trace"] = trace;
  j["timings"] = r.timings;
  return j;
}

inline int cmd_fit(const CommonOptions& c, const FitOptions& f, std::ostream& log) {
  c.validate();
  gphodlr::OptimizerOptions opt;
  opt.method = gphodlr::parse_method(f.method);
  opt.rel_tol = f.rel_tol;
  opt.max_iters = f.max_iters;
  opt.initial_radius = f.initial_radius;
  opt.max_radius = std::max(opt.max_radius, opt.initial_radius);
  opt.validate();
  const bool nugget = f.theta_init.size() == 3;
  if (f.theta_init.size() != 2 && !nugget) {
    throw gphodlr::InvalidInput("--theta-init takes 2 values (scale range) or 3 (scale range nugget)");
  }
  const Eigen::VectorXd init = Eigen::Map<const Eigen::VectorXd>(f.theta_init.data(), static_cast<Eigen::Index>(f.theta_init.size()));
  if (!(init.array() > 0.0).all()) throw gphodlr::InvalidInput("--theta-init values must be positive");
  const Dataset ds = read_dataset(f.data);
  if (f.exact && ds.points.size() > c.dense_cap) {
    throw gphodlr::CapExceeded("fit --exact: n (raise --dense-cap)", ds.points.size(), c.dense_cap);
  }
  const auto model = c.model(nugget);

  gphodlr::HodlrFitConfig cfg;
  cfg.hodlr = c.hodlr();
  cfg.saa_count = c.nhutch;
  cfg.seed = c.seed;
  cfg.optimizer = opt;

  json out = header("fit", c);
  out["config"]["data"] = f.data;
  out["config"]["theta_init"] = f.theta_init;
  out["config"]["method"] = std::string(gphodlr::to_string(opt.method));
  out["config"]["rel_tol"] = opt.rel_tol;
  out["config"]["max_iters"] = opt.max_iters;
  out["config"]["initial_radius"] = opt.initial_radius;
  out["config"]["exact"] = f.exact;
  out["n"] = ds.points.size();

  const auto layout = gphodlr::make_layout(ds.points, cfg.hodlr);
  out["hodlr"] = {{"level", layout->level()}, {"rank", layout->rank}, {"warnings", layout->warnings}};
  const gphodlr::MLEReport h = gphodlr::fit_hodlr(model, ds.points, ds.values, init, cfg);
  out["hodlr_fit"] = report_json(h);
  bool converged = h.converged;
  log << "HODLR fit: theta_hat = " << h.theta_hat.transpose() << " (" << h.status << ", " << h.iterations
      << " iterations)\n";
  if (f.exact) {
    const gphodlr::MLEReport e = gphodlr::fit_exact(model, ds.points, ds.values, init, opt, c.dense_cap);
    out["exact_fit"] = report_json(e);
    converged = converged && e.converged;
    log << "exact fit: theta_hat = " << e.theta_hat.transpose() << " (" << e.status << ", " << e.iterations
        << " iterations)\n";
    if (e.confidence.available) {
      json cmp;
      const Eigen::VectorXd diff = (h.theta_hat - e.theta_hat).cwiseAbs();
      cmp["abs_difference"] = to_json(diff);
      cmp["in_standard_errors"] = to_json(Eigen::VectorXd(diff.cwiseQuotient(e.confidence.std_errors)));
      out["comparison"] = cmp;
    }
  }
  write_json(c.out, out);
  return converged ? kOk : kNotConverged;
}

struct BenchmarkOptions {
  std::vector<std::size_t> sizes{1024, 2048, 4096, 8192, 16384, 32768};
  std::vector<std::size_t> ranks{32, 72, 100};
  std::size_t exact_max = 8192;
  double theta0 = 3.0;
  double theta1 = 5.0;
  int repeats = 3;
};

inline std::vector<gphodlr::TimingRow> run_benchmark(const CommonOptions& c, const BenchmarkOptions& b,
                                                     std::ostream& log) {
  for (std::size_t i = 1; i < b.sizes.size(); ++i) {
    if (b.sizes[i] <= b.sizes[i - 1]) throw gphodlr::InvalidInput("--sizes must be strictly ascending");
  }
  const auto model = c.model();
  const Eigen::Vector2d theta(b.theta0, b.theta1);
  std::vector<gphodlr::TimingRow> rows;
  for (std::size_t n : b.sizes) {
    const auto pts = gphodlr::random_locations(n, 2, 100.0, c.seed + n);
    // Timings do not depend on the data values; a fixed pseudo-random vector avoids a dense simulation.
    gphodlr::NormalGenerator normal(c.seed);
    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = normal();
    for (std::size_t rank : b.ranks) {
      gphodlr::HodlrOptions o = c.hodlr();
      o.rank = rank;
      auto r = gphodlr::time_hodlr_calls(model, theta, pts, y, o, c.nhutch, c.seed, b.repeats);
      for (const auto& row : r) log << "n=" << row.n << " rank=" << row.rank << " " << row.op << " " << row.seconds << " s\n";
      rows.insert(rows.end(), r.begin(), r.end());
    }
    if (n <= std::min(b.exact_max, c.dense_cap)) {
      auto r = gphodlr::time_exact_calls(model, theta, pts, y, 1, c.dense_cap);
      for (const auto& row : r) log << "n=" << row.n << " exact " << row.op << " " << row.seconds << " s\n";
      rows.insert(rows.end(), r.begin(), r.end());
    }
  }
  return rows;
}

inline int cmd_benchmark(const CommonOptions& c, const BenchmarkOptions& b, std::ostream& log) {
  c.validate();
  const auto rows = run_benchmark(c, b, log);
  std::ofstream out = open_output(c.out);
  out << "n,rank,op,seconds\n";
  for (const auto& r : rows) out << r.n << ',' << r.rank << ',' << r.op << ',' << format_double(r.seconds) << '\n';
  json meta = header("benchmark", c);
  meta["config"]["sizes"] = b.sizes;
  meta["config"]["ranks"] = b.ranks;
  meta["config"]["exact_max"] = b.exact_max;
  meta["config"]["theta"] = {b.theta0, b.theta1};
  meta["config"]["repeats"] = b.repeats;
  write_json(sidecar_path(c.out), meta);
  return kOk;
}

struct TraceOptions {
  std::size_t n = 2048;
  double theta0 = 3.0;
  double theta1 = 40.0;
  std::vector<std::size_t> nh_grid{5, 10, 20, 35, 50};
  std::size_t replicates = 50;
};

inline int cmd_trace_experiment(const CommonOptions& c, const TraceOptions& t, std::ostream& log) {
  c.validate();
  const auto model = c.model();
  const auto pts = gphodlr::random_locations(t.n, 2, 100.0, c.seed);
  const auto rows = gphodlr::trace_spread(model, Eigen::Vector2d(t.theta0, t.theta1), pts, c.hodlr(), t.nh_grid,
                                          t.replicates, c.seed);
  std::ofstream out = open_output(c.out);
  out << "nh,parameter,estimator,mean,std,rel_std\n";
  for (const auto& r : rows) {
    out << r.nh << ',' << r.parameter << ',' << r.estimator << ',' << format_double(r.mean) << ','
        << format_double(r.std_dev) << ',' << format_double(r.rel_std) << '\n';
  }
  json meta = header("trace-experiment", c);
  meta["config"]["n"] = t.n;
  meta["config"]["theta"] = {t.theta0, t.theta1};
  meta["config"]["nh_grid"] = t.nh_grid;
  meta["config"]["replicates"] = t.replicates;
  write_json(sidecar_path(c.out), meta);
  log << "wrote " << rows.size() << " rows to " << c.out << "\n";
  return kOk;
}

struct SurfaceOptions {
  std::string data;  // empty: simulate n points at theta_true
  std::size_t n = 4096;
  double theta0 = 3.0;
  double theta1 = 5.0;
  std::vector<std::size_t> levels{5, 6, 7, 8, 9};
  std::vector<std::size_t> ranks;  // empty: --rank
  std::string theta0_grid = "1.5:5:36";
  std::string theta1_grid = "3:8:26";
};

inline std::vector<gphodlr::Surface> run_surfaces(const CommonOptions& c, const SurfaceOptions& s, const Dataset& ds) {
  const auto t0 = parse_grid(s.theta0_grid, "--theta0-grid");
  const auto t1 = parse_grid(s.theta1_grid, "--theta1-grid");
  const Eigen::VectorXd g0 = Eigen::Map<const Eigen::VectorXd>(t0.data(), static_cast<Eigen::Index>(t0.size()));
  const Eigen::VectorXd g1 = Eigen::Map<const Eigen::VectorXd>(t1.data(), static_cast<Eigen::Index>(t1.size()));
  const std::vector<std::size_t> ranks = s.ranks.empty() ? std::vector<std::size_t>{c.rank} : s.ranks;
  std::vector<gphodlr::Surface> out;
  for (std::size_t level : s.levels) {
    for (std::size_t rank : ranks) {
      out.push_back(gphodlr::likelihood_surface(c.model(), ds.points, ds.values, g0, g1, {level, rank}));
    }
  }
  return out;
}

inline int cmd_surface(const CommonOptions& c, const SurfaceOptions& s, std::ostream& log) {
  c.validate();
  Dataset ds;
  if (!s.data.empty()) {
    ds = read_dataset(s.data);
  } else {
    if (s.n > c.dense_cap) throw gphodlr::CapExceeded("surface: simulated n (raise --dense-cap)", s.n, c.dense_cap);
    ds.points = gphodlr::random_locations(s.n, 2, 100.0, c.seed);
    ds.values = gphodlr::simulate_gp(c.model(), Eigen::Vector2d(s.theta0, s.theta1), ds.points,
                                     gphodlr::splitmix64(c.seed ^ 0x5eed), c.dense_cap);
  }
  const auto surfaces = run_surfaces(c, s, ds);
  const auto t0 = parse_grid(s.theta0_grid, "--theta0-grid");
  const auto t1 = parse_grid(s.theta1_grid, "--theta1-grid");
  std::ofstream out = open_output(c.out);
  out << "level,rank,theta0,theta1,value\n";
  json argmins = json::array();
  for (const auto& sf : surfaces) {
    for (Eigen::Index a = 0; a < sf.centered.rows(); ++a) {
      for (Eigen::Index b = 0; b < sf.centered.cols(); ++b) {
        out << sf.setting.level << ',' << sf.setting.rank << ',' << format_double(t0[static_cast<std::size_t>(a)])
            << ',' << format_double(t1[static_cast<std::size_t>(b)]) << ',' << format_double(sf.centered(a, b))
            << '\n';
      }
    }
    argmins.push_back({{"level", sf.setting.level},
                       {"rank", sf.setting.rank},
                       {"theta0", t0[static_cast<std::size_t>(sf.argmin0)]},
                       {"theta1", t1[static_cast<std::size_t>(sf.argmin1)]},
                       {"index", {sf.argmin0, sf.argmin1}},
                       {"minimum", sf.minimum}});
    log << "level " << sf.setting.level << " rank " << sf.setting.rank << ": argmin ("
        << t0[static_cast<std::size_t>(sf.argmin0)] << ", " << t1[static_cast<std::size_t>(sf.argmin1)] << ")\n";
  }
  json meta = header("surface", c);
  meta["config"]["data"] = s.data;
  meta["config"]["n"] = ds.points.size();
  meta["config"]["theta_true"] = {s.theta0, s.theta1};
  meta["config"]["levels"] = s.levels;
  meta["config"]["ranks"] = s.ranks.empty() ? std::vector<std::size_t>{c.rank} : s.ranks;
  meta["config"]["theta0_grid"] = s.theta0_grid;
  meta["config"]["theta1_grid"] = s.theta1_grid;
  meta["argmins"] = argmins;
  write_json(sidecar_path(c.out), meta);
  return kOk;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Gaussian-process maximum likelihood with HODLR covariance approximations", "gp"};
  app.set_version_flag("--version", std::string(gphodlr::kVersion));
  app.require_subcommand(1);

  CommonOptions common;
  SimulateOptions sim;
  FitOptions fit;
  BenchmarkOptions bench;
  TraceOptions trace;
  SurfaceOptions surf;

  auto* simulate = app.add_subcommand("simulate", "Simulate a Gaussian-process dataset (dense Cholesky)");
  add_common(*simulate, common);
  simulate->add_option("--n", sim.n, "Number of observations");
  simulate->add_option("--dim", sim.dim, "Spatial dimension");
  simulate->add_option("--side", sim.side, "Domain edge length");
  simulate->add_option("--theta0", sim.theta0, "Scale");
  simulate->add_option("--theta1", sim.theta1, "Range");
  simulate->add_option("--nugget", sim.nugget, "Nugget variance");

  auto* fitc = app.add_subcommand("fit", "Fit the model by maximum likelihood");
  add_common(*fitc, common);
  fitc->add_option("--data", fit.data, "Dataset CSV")->required();
  fitc->add_option("--theta-init", fit.theta_init, "Starting values (scale range [nugget])")->expected(2, 3);
  fitc->add_option("--method", fit.method, "trust_region or gradient_only")->envname("GPHODLR_METHOD");
  fitc->add_option("--rel-tol", fit.rel_tol, "Relative objective tolerance")->envname("GPHODLR_REL_TOL");
  fitc->add_option("--max-iters", fit.max_iters, "Iteration limit")->envname("GPHODLR_MAX_ITERS");
  fitc->add_option("--initial-radius", fit.initial_radius, "Initial trust radius (log scale)");
  fitc->add_flag("--exact", fit.exact, "Also fit with the exact dense likelihood")->envname("GPHODLR_EXACT");

  auto* benchc = app.add_subcommand("benchmark", "Time likelihood, gradient and Hessian calls");
  add_common(*benchc, common);
  benchc->add_option("--sizes", bench.sizes, "Ascending list of n");
  benchc->add_option("--ranks", bench.ranks, "Off-diagonal ranks");
  benchc->add_option("--exact-max", bench.exact_max, "Largest n for the dense path");
  benchc->add_option("--theta0", bench.theta0, "Scale");
  benchc->add_option("--theta1", bench.theta1, "Range");
  benchc->add_option("--repeats", bench.repeats, "Best-of repeats for the HODLR path");

  auto* tracec = app.add_subcommand("trace-experiment", "Spread of plain and symmetrized trace estimates");
  add_common(*tracec, common);
  tracec->add_option("--n", trace.n, "Number of locations");
  tracec->add_option("--theta0", trace.theta0, "Scale");
  tracec->add_option("--theta1", trace.theta1, "Range");
  tracec->add_option("--nh-grid", trace.nh_grid, "Values of N_h");
  tracec->add_option("--replicates", trace.replicates, "Independent estimates per N_h");

  auto* surfc = app.add_subcommand("surface", "Centered -l_H surfaces across HODLR levels and ranks");
  add_common(*surfc, common);
  surfc->add_option("--data", surf.data, "Dataset CSV (default: simulate)");
  surfc->add_option("--n", surf.n, "Simulated n when --data is not given");
  surfc->add_option("--theta0", surf.theta0, "Simulation scale");
  surfc->add_option("--theta1", surf.theta1, "Simulation range");
  surfc->add_option("--levels", surf.levels, "HODLR levels");
  surfc->add_option("--ranks", surf.ranks, "Off-diagonal ranks (default: --rank)");
  surfc->add_option("--theta0-grid", surf.theta0_grid, "lo:hi:count");
  surfc->add_option("--theta1-grid", surf.theta1_grid, "lo:hi:count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, log, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, log, err);
    return kInputError;
  }

  try {
    if (common.threads > 0) gphodlr::set_num_threads(common.threads);
    if (*simulate) return cmd_simulate(common, sim, log);
    if (*fitc) return cmd_fit(common, fit, log);
    if (*benchc) return cmd_benchmark(common, bench, log);
    if (*tracec) return cmd_trace_experiment(common, trace, log);
    if (*surfc) return cmd_surface(common, surf, log);
  } catch (const gphodlr::InvalidInput& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const gphodlr::DimensionMismatch& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const gphodlr::CapExceeded& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const gphodlr::UnsupportedParameter& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const gphodlr::LevelTooDeep& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const gphodlr::Error& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumericalFailure;
  } catch (const std::bad_alloc&) {
    err << "numerical failure: out of memory (lower --dense-cap or the problem size)\n";
    return kNumericalFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }
  return kInputError;
}

}  // namespace gpcli
