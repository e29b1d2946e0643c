#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "gphodlr/likelihood.hpp"
#include "gphodlr/oracle.hpp"
#include "test_support.hpp"

using gphodlr::CovarianceModel;
using gphodlr::FitState;
using gphodlr::HodlrOptions;
using gphodlr::KernelId;

namespace {

HodlrOptions opts(std::size_t rank, std::size_t level) {
  HodlrOptions o;
  o.rank = rank;
  o.level = level;
  return o;
}

// Points 10 apart on a grid; with theta1 = 0.01 every off-diagonal kernel
// value underflows to zero and Sigma~ = theta0 I exactly.
gphodlr::PointSet spread_grid(std::size_t side) {
  Eigen::MatrixXd c(2, static_cast<Eigen::Index>(side * side));
  for (std::size_t i = 0; i < side; ++i) {
    for (std::size_t j = 0; j < side; ++j) {
      c(0, static_cast<Eigen::Index>(i * side + j)) = 10.0 * static_cast<double>(i);
      c(1, static_cast<Eigen::Index>(i * side + j)) = 10.0 * static_cast<double>(j);
    }
  }
  return gphodlr::PointSet{c};
}

std::shared_ptr<const gphodlr::SaaVectors> saa(std::size_t n, std::size_t count, std::uint64_t seed) {
  return std::make_shared<const gphodlr::SaaVectors>(gphodlr::make_saa(n, count, seed));
}

struct Problem {
  CovarianceModel model{KernelId::matern_alt, 1.0};
  Eigen::VectorXd theta;
  gphodlr::PointSet points;
  std::shared_ptr<const gphodlr::HodlrLayout> layout;
  Eigen::VectorXd y;
};

Problem make_problem(std::size_t n, Eigen::VectorXd theta, std::size_t rank, std::size_t level,
                     std::uint64_t seed = 3) {
  Problem p;
  p.theta = std::move(theta);
  p.points = gptest::uniform_points(n, seed);
  p.layout = gphodlr::make_layout(p.points, opts(rank, level));
  p.y = gphodlr::simulate_gp(p.model, Eigen::Vector2d(3.0, 5.0), p.points, seed + 100);
  return p;
}

}  // namespace

TEST(Saa, EntriesArePlusMinusOneAndSeeded) {
  const auto a = gphodlr::make_saa(300, 7, 11);
  const auto b = gphodlr::make_saa(300, 7, 11);
  const auto c = gphodlr::make_saa(300, 7, 12);
  EXPECT_TRUE((a.vectors.array().abs() == 1.0).all());
  EXPECT_EQ(a.vectors, b.vectors);
  EXPECT_NE(a.vectors, c.vectors);
  EXPECT_THROW(gphodlr::make_saa(10, 0, 1), gphodlr::InvalidInput);
}

TEST(NegLoglik, IdentityWithZeroDataIsZero) {
  const auto pts = spread_grid(20);
  const auto layout = gphodlr::make_layout(pts, opts(16, 1));
  const CovarianceModel model(KernelId::matern_alt, 1.0);
  // Alternative Matern at r = 0 is theta0 * theta1^2 / 4 for nu = 1; choose theta0 for a unit diagonal.
  const double theta1 = 0.01;
  const Eigen::Vector2d theta(4.0 / (theta1 * theta1), theta1);
  const FitState s(model, theta, layout, Eigen::VectorXd::Zero(400));
  EXPECT_NEAR(gphodlr::neg_loglik(s), 0.0, 1e-10);
}

TEST(NegLoglik, ScaledIdentityClosedForm) {
  const auto pts = spread_grid(20);
  const auto layout = gphodlr::make_layout(pts, opts(16, 1));
  const CovarianceModel model(KernelId::matern_standard, 1.0);
  const double theta0 = 2.5;
  const Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(400, -1.0, 2.0);
  const FitState s(model, Eigen::Vector2d(theta0, 0.01), layout, y);
  const double want = 200.0 * std::log(theta0) + y.squaredNorm() / (2.0 * theta0);
  EXPECT_NEAR(gphodlr::neg_loglik(s), want, 1e-10 * std::abs(want));
}

TEST(NegLoglik, MatchesDenseEvaluation) {
  const Problem p = make_problem(1024, Eigen::Vector2d(2.0, 2.0), 72, 2);
  const FitState s(p.model, p.theta, p.layout, p.y);
  const Eigen::MatrixXd dense = gphodlr::to_dense(s.hodlr());
  const Eigen::LLT<Eigen::MatrixXd> llt(dense);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double want = 0.5 * logdet + 0.5 * s.y().dot(llt.solve(s.y()));
  EXPECT_LT(std::abs(gphodlr::neg_loglik(s) - want), 1e-8 * std::abs(want));
}

TEST(NegLoglik, RejectsBadObservations) {
  const Problem p = make_problem(300, Eigen::Vector2d(2.0, 2.0), 32, 1);
  EXPECT_THROW(FitState(p.model, p.theta, p.layout, Eigen::VectorXd::Zero(299)), gphodlr::DimensionMismatch);
  Eigen::VectorXd bad = p.y;
  bad(5) = std::nan("");
  EXPECT_THROW(FitState(p.model, p.theta, p.layout, bad), gphodlr::InvalidInput);
}

TEST(Trace, CovarianceItselfGivesNPerProbe) {
  const Problem p = make_problem(800, Eigen::Vector2d(3.0, 5.0), 48, 2);
  const FitState s(p.model, p.theta, p.layout, p.y, saa(800, 6, 2));
  const Eigen::VectorXd samples = gphodlr::trace_samples(s, s.hodlr(), true);
  for (Eigen::Index l = 0; l < samples.size(); ++l) EXPECT_NEAR(samples(l), 800.0, 1e-8 * 800.0);
}

TEST(Trace, ScaleDerivativeIsExactForEveryProbe) {
  const Problem p = make_problem(800, Eigen::Vector2d(3.0, 5.0), 48, 2);
  const FitState s(p.model, p.theta, p.layout, p.y, saa(800, 5, 4));
  const Eigen::VectorXd samples = gphodlr::trace_samples(s, s.first(gphodlr::kScale), true);
  for (Eigen::Index l = 0; l < samples.size(); ++l) EXPECT_NEAR(samples(l), 800.0 / 3.0, 1e-9 * 800.0);
}

TEST(Trace, PlainAndSymmetrizedAgreeOnAverage) {
  const Problem p = make_problem(512, Eigen::Vector2d(3.0, 20.0), 48, 1);
  const FitState s(p.model, p.theta, p.layout, p.y, saa(512, 400, 5));
  const auto dense = gphodlr::dense_hodlr_model(s.hodlr());
  const double exact = gphodlr::exact_trace(dense, gphodlr::to_dense(s.first(gphodlr::kRange)));
  for (bool sym : {true, false}) {
    const Eigen::VectorXd t = gphodlr::trace_samples(s, s.first(gphodlr::kRange), sym);
    const double mean = t.mean();
    const double se = std::sqrt((t.array() - mean).square().sum() / (t.size() - 1.0) / t.size());
    EXPECT_LT(std::abs(mean - exact), 4.0 * se + 1e-9 * std::abs(exact)) << "symmetrized=" << sym;
  }
}

TEST(Trace, NeedsProbes) {
  const Problem p = make_problem(300, Eigen::Vector2d(2.0, 2.0), 32, 1);
  const FitState s(p.model, p.theta, p.layout, p.y);
  EXPECT_THROW(gphodlr::stoch_gradient(s), gphodlr::InvalidInput);
}

TEST(Gradient, ScaleComponentVanishesAtProfileScale) {
  const Problem p = make_problem(1024, Eigen::Vector2d(1.0, 4.0), 64, 2);
  const FitState unit(p.model, p.theta, p.layout, p.y);
  const double theta0 = gphodlr::profile(unit).theta0_hat;
  const FitState s(p.model, Eigen::Vector2d(theta0, 4.0), p.layout, p.y, saa(1024, 3, 1));
  const Eigen::VectorXd g = gphodlr::stoch_gradient(s);
  EXPECT_NEAR(g(gphodlr::kScale), 0.0, 1e-8 * 1024.0 / theta0);
}

TEST(Gradient, ScaleComponentIsExact) {
  const Problem p = make_problem(1024, Eigen::Vector2d(2.0, 2.0), 72, 2);
  const FitState s(p.model, p.theta, p.layout, p.y, saa(1024, 2, 9));
  const auto dense = gphodlr::dense_hodlr_model(s.hodlr());
  const Eigen::VectorXd exact = gphodlr::exact_gradient(dense, s.y());
  const Eigen::VectorXd g = gphodlr::stoch_gradient(s);
  EXPECT_NEAR(g(0), exact(0), 1e-8 * std::abs(exact(0)) + 1e-8);
}

TEST(Fisher, ScaleEntryAndPsd) {
  const Problem p = make_problem(1024, Eigen::Vector2d(3.0, 5.0), 72, 2);
  for (std::uint64_t seed : {1, 2, 3}) {
    const FitState s(p.model, p.theta, p.layout, p.y, saa(1024, 5, seed));
    const Eigen::MatrixXd f = gphodlr::stoch_fisher(s);
    EXPECT_NEAR(f(0, 0), 1024.0 / (2.0 * 9.0), 1e-9 * 1024.0 / 18.0);
    EXPECT_EQ(f, f.transpose());
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(f).eigenvalues().minCoeff(), -1e-10);
  }
}

TEST(Fisher, PsdWithNuggetAndFewProbes) {
  const CovarianceModel model(KernelId::matern_standard, 1.5, true);
  const auto pts = gptest::uniform_points(600, 8);
  const auto layout = gphodlr::make_layout(pts, opts(40, 1));
  const Eigen::VectorXd y = Eigen::VectorXd::Random(600);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const FitState s(model, Eigen::Vector3d(2.0, 4.0, 0.3), layout, y, saa(600, 2, seed));
    const Eigen::MatrixXd f = gphodlr::stoch_fisher(s);
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(f).eigenvalues().minCoeff(), -1e-10);
  }
}

TEST(Hessian, ScaleEntryMatchesClosedForm) {
  const Problem p = make_problem(1024, Eigen::Vector2d(2.5, 5.0), 72, 2);
  const FitState unit(p.model, Eigen::Vector2d(1.0, 5.0), p.layout, p.y);
  const double q = unit.quadratic_form();
  const double theta0 = 2.5;
  const FitState s(p.model, p.theta, p.layout, p.y, saa(1024, 4, 3));
  const Eigen::MatrixXd h = gphodlr::stoch_hessian(s);
  // d^2/dtheta0^2 of (n/2) log theta0 + q / (2 theta0).
  const double want = -1024.0 / (2.0 * theta0 * theta0) + q / (theta0 * theta0 * theta0);
  EXPECT_NEAR(h(0, 0), want, 1e-8 * std::abs(want) + 1e-8);
  EXPECT_EQ(h, h.transpose());
}

TEST(Estimators, ExactInTheLimitOfManyProbes) {
  // With many probes the estimates approach the dense values of l_H.
  const Problem p = make_problem(512, Eigen::Vector2d(2.0, 3.0), 48, 1);
  const FitState s(p.model, p.theta, p.layout, p.y, saa(512, 300, 21));
  const auto dense = gphodlr::dense_hodlr_model(s.hodlr());
  const auto exact = gphodlr::exact_derivatives(dense, s.y(), 2);
  EXPECT_LT((gphodlr::stoch_gradient(s) - exact.gradient).norm() / exact.gradient.norm(), 1e-2);
  EXPECT_LT(gptest::rel_fro(gphodlr::stoch_fisher(s), exact.fisher), 2e-2);
  EXPECT_LT(gptest::rel_fro(gphodlr::stoch_hessian(s), exact.hessian), 2e-2);
  EXPECT_NEAR(gphodlr::neg_loglik(s), exact.value, 1e-8 * std::abs(exact.value));
}

TEST(Estimators, UnbiasedOverIndependentProbeSets) {
  const Problem p = make_problem(512, Eigen::Vector2d(2.0, 3.0), 48, 1);
  const FitState base(p.model, p.theta, p.layout, p.y);
  const auto dense = gphodlr::dense_hodlr_model(base.hodlr());
  const auto exact = gphodlr::exact_derivatives(dense, base.y(), 2);

  constexpr int kSeeds = 200;
  std::vector<Eigen::VectorXd> samples;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    const FitState s(p.model, p.theta, p.layout, p.y, saa(512, 2, static_cast<std::uint64_t>(seed)));
    const Eigen::VectorXd g = gphodlr::stoch_gradient(s);
    const Eigen::MatrixXd f = gphodlr::stoch_fisher(s);
    const Eigen::MatrixXd h = gphodlr::stoch_hessian(s, f);
    Eigen::VectorXd row(8);
    row << g(0), g(1), f(0, 0), f(0, 1), f(1, 1), h(0, 0), h(0, 1), h(1, 1);
    samples.push_back(row);
  }
  Eigen::VectorXd want(8);
  want << exact.gradient(0), exact.gradient(1), exact.fisher(0, 0), exact.fisher(0, 1), exact.fisher(1, 1),
      exact.hessian(0, 0), exact.hessian(0, 1), exact.hessian(1, 1);
  for (Eigen::Index c = 0; c < 8; ++c) {
    double mean = 0.0;
    for (const auto& r : samples) mean += r(c);
    mean /= kSeeds;
    double var = 0.0;
    for (const auto& r : samples) var += (r(c) - mean) * (r(c) - mean);
    const double se = std::sqrt(var / (kSeeds - 1.0) / kSeeds);
    EXPECT_LE(std::abs(mean - want(c)), 3.0 * se + 1e-9 * std::abs(want(c))) << "component " << c;
  }
}

TEST(Profile, IdentityModel) {
  const auto pts = spread_grid(16);
  const auto layout = gphodlr::make_layout(pts, opts(16, 1));
  const CovarianceModel model(KernelId::matern_standard, 1.0);
  Eigen::VectorXd y = Eigen::VectorXd::Ones(256);
  const FitState s(model, Eigen::Vector2d(1.0, 0.01), layout, y);
  const auto pr = gphodlr::profile(s);
  EXPECT_NEAR(pr.value, 128.0 * std::log(256.0), 1e-10);
  EXPECT_NEAR(pr.theta0_hat, 1.0, 1e-14);
}

TEST(Profile, OffsetIdentity) {
  const Problem p = make_problem(1024, Eigen::Vector2d(1.0, 1.0), 64, 2);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> range(0.5, 20.0);
  for (int rep = 0; rep < 5; ++rep) {
    const double theta1 = range(rng);
    const FitState unit(p.model, Eigen::Vector2d(1.0, theta1), p.layout, p.y);
    const auto pr = gphodlr::profile(unit);
    const FitState at_hat(p.model, Eigen::Vector2d(pr.theta0_hat, theta1), p.layout, p.y);
    const double offset = gphodlr::neg_loglik(at_hat) - pr.value;
    EXPECT_NEAR(offset, 512.0 * (1.0 - std::log(1024.0)), 1e-8 * 512.0 * std::log(1024.0));
  }
}

TEST(Profile, RequiresUnitScale) {
  const Problem p = make_problem(300, Eigen::Vector2d(2.0, 2.0), 32, 1);
  const FitState s(p.model, p.theta, p.layout, p.y);
  EXPECT_THROW(gphodlr::profile(s), gphodlr::InvalidInput);
}

TEST(Profile, GridArgminMatchesTwoDimensionalGrid) {
  const Problem p = make_problem(1024, Eigen::Vector2d(1.0, 1.0), 64, 2);
  const Eigen::VectorXd theta0s = Eigen::VectorXd::LinSpaced(21, 1.0, 6.0);
  const Eigen::VectorXd theta1s = Eigen::VectorXd::LinSpaced(11, 2.0, 10.0);
  Eigen::Index profile_best = 0;
  double profile_min = std::numeric_limits<double>::infinity();
  double grid_min = std::numeric_limits<double>::infinity();
  Eigen::Index grid_best = 0;
  for (Eigen::Index b = 0; b < theta1s.size(); ++b) {
    const FitState unit(p.model, Eigen::Vector2d(1.0, theta1s(b)), p.layout, p.y);
    const double pv = gphodlr::profile(unit).value;
    if (pv < profile_min) {
      profile_min = pv;
      profile_best = b;
    }
    for (Eigen::Index a = 0; a < theta0s.size(); ++a) {
      const FitState s(p.model, Eigen::Vector2d(theta0s(a), theta1s(b)), p.layout, p.y);
      const double v = gphodlr::neg_loglik(s);
      if (v < grid_min) {
        grid_min = v;
        grid_best = b;
      }
    }
  }
  EXPECT_EQ(profile_best, grid_best);
}

TEST(ErrorMetrics, HandExample) {
  const Eigen::Matrix2d exact_f = Eigen::Vector2d(2.0, 1.0).asDiagonal();
  const Eigen::Matrix2d approx_f = Eigen::Matrix2d::Identity();
  const Eigen::Vector2d g(0.3, -0.2);
  const auto e = gphodlr::error_metrics(g + Eigen::Vector2d(1.0, 0.0), g, approx_f, exact_f);
  EXPECT_NEAR(e.eta_g, 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(e.eta_fisher, std::sqrt(0.5), 1e-15);
  const auto same = gphodlr::error_metrics(g, g, exact_f, exact_f);
  EXPECT_EQ(same.eta_g, 0.0);
  EXPECT_EQ(same.eta_fisher, 0.0);
}

TEST(ErrorMetrics, InvariantUnderLinearReparameterization) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::Matrix3d a, b, t;
    for (int i = 0; i < 9; ++i) {
      a(i) = z(rng);
      b(i) = z(rng);
      t(i) = z(rng);
    }
    const Eigen::Matrix3d exact_f = a * a.transpose() + Eigen::Matrix3d::Identity();
    const Eigen::Matrix3d approx_f = b * b.transpose() + 0.5 * Eigen::Matrix3d::Identity();
    const Eigen::Vector3d g(z(rng), z(rng), z(rng));
    const Eigen::Vector3d gh(z(rng), z(rng), z(rng));
    const auto e = gphodlr::error_metrics(gh, g, approx_f, exact_f);
    const Eigen::Matrix3d ti = t.inverse();
    const auto r = gphodlr::error_metrics(ti.transpose() * gh, ti.transpose() * g,
                                          ti.transpose() * approx_f * ti, ti.transpose() * exact_f * ti);
    EXPECT_NEAR(r.eta_g, e.eta_g, 1e-10 * std::max(1.0, e.eta_g));
    EXPECT_NEAR(r.eta_fisher, e.eta_fisher, 1e-10 * std::max(1.0, e.eta_fisher));
  }
}

TEST(ErrorMetrics, IndefiniteEstimateIsInfinite) {
  const Eigen::Matrix2d exact_f = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d bad;
  bad << 1.0, 2.0, 2.0, 1.0;
  const auto e = gphodlr::error_metrics(Eigen::Vector2d::Zero(), Eigen::Vector2d::Ones(), bad, exact_f);
  EXPECT_TRUE(std::isinf(e.eta_fisher));
  EXPECT_THROW(gphodlr::error_metrics(Eigen::Vector2d::Zero(), Eigen::Vector2d::Ones(), exact_f, bad),
               gphodlr::NotPositiveDefinite);
}
