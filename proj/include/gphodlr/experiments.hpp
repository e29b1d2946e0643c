#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "gphodlr/fit.hpp"
#include "gphodlr/geometry.hpp"
#include "gphodlr/hodlr.hpp"
#include "gphodlr/kernel.hpp"
#include "gphodlr/likelihood.hpp"
#include "gphodlr/oracle.hpp"
#include "gphodlr/random.hpp"

namespace gphodlr {

/// n points drawn uniformly from [0, side]^d (mt19937_64, 53-bit uniforms).
inline PointSet random_locations(std::size_t n, std::size_t d, double side, std::uint64_t seed) {
  if (n < 1 || d < 1) throw InvalidInput("random_locations needs n >= 1 and d >= 1");
  if (!(side > 0.0) || !std::isfinite(side)) throw InvalidInput("domain side must be positive");
  std::mt19937_64 engine(splitmix64(seed));
  Eigen::MatrixXd c(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
  for (Eigen::Index j = 0; j < c.cols(); ++j) {
    for (Eigen::Index i = 0; i < c.rows(); ++i) {
      c(i, j) = side * static_cast<double>(engine() >> 11) * 0x1.0p-53;
    }
  }
  return PointSet(std::move(c));
}

// ---------------------------------------------------------------------------
// Call timings

struct TimingRow {
  std::size_t n = 0;
  std::string rank;  // HODLR rank, or "exact" for the dense path
  std::string op;    // likelihood | gradient | hessian
  double seconds = 0.0;
};

namespace detail {

template <class F>
double best_of(int repeats, F&& f) {
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(repeats, 1); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

}  // namespace detail

/// Wall time of one complete likelihood, gradient and Hessian call on the
/// HODLR path. Each call starts from theta alone (assembly and factorization
/// included); the best of `repeats` runs is reported.
inline std::vector<TimingRow> time_hodlr_calls(const CovarianceModel& model, const Eigen::VectorXd& theta,
                                               const PointSet& points, const Eigen::VectorXd& y,
                                               const HodlrOptions& options, std::size_t saa_count,
                                               std::uint64_t seed, int repeats) {
  const auto layout = make_layout(points, options);
  const auto saa = std::make_shared<const SaaVectors>(make_saa(points.size(), saa_count, seed));
  const std::string rank = std::to_string(layout->rank);
  volatile double sink = 0.0;
  std::vector<TimingRow> rows;
  rows.push_back({points.size(), rank, "likelihood", detail::best_of(repeats, [&] {
                    const FitState s(model, theta, layout, y, saa);
                    sink = neg_loglik(s);
                  })});
  rows.push_back({points.size(), rank, "gradient", detail::best_of(repeats, [&] {
                    const FitState s(model, theta, layout, y, saa);
                    sink = stoch_gradient(s)(0);
                  })});
  rows.push_back({points.size(), rank, "hessian", detail::best_of(repeats, [&] {
                    const FitState s(model, theta, layout, y, saa);
                    sink = stoch_hessian(s)(0, 0);
                  })});
  (void)sink;
  return rows;
}

/// Same three calls with dense matrices and exact traces.
inline std::vector<TimingRow> time_exact_calls(const CovarianceModel& model, const Eigen::VectorXd& theta,
                                               const PointSet& points, const Eigen::VectorXd& y, int repeats,
                                               std::size_t cap = kDefaultDenseCap) {
  volatile double sink = 0.0;
  std::vector<TimingRow> rows;
  const char* ops[] = {"likelihood", "gradient", "hessian"};
  for (int order = 0; order <= 2; ++order) {
    rows.push_back({points.size(), "exact", ops[order], detail::best_of(repeats, [&] {
                      const DenseModel d = dense_kernel_model(model, theta, points, cap);
                      sink = exact_derivatives(d, y, order).value;
                    })});
  }
  (void)sink;
  return rows;
}

// ---------------------------------------------------------------------------
// Spread of the plain and symmetrized trace estimators

struct TraceSpreadRow {
  std::size_t nh = 0;
  std::string parameter;  // scale | range
  std::string estimator;  // plain | symmetrized
  double mean = 0.0;
  double std_dev = 0.0;
  double rel_std = 0.0;  // std_dev / |mean|
};

/// For each N_h in `nh_grid`: mean and standard deviation over `replicates`
/// independent estimates of tr(Sigma~^{-1} Sigma~_j), each the average of N_h
/// probes. Replicate r uses its own block of probe columns.
inline std::vector<TraceSpreadRow> trace_spread(const CovarianceModel& model, const Eigen::VectorXd& theta,
                                                const PointSet& points, const HodlrOptions& options,
                                                const std::vector<std::size_t>& nh_grid, std::size_t replicates,
                                                std::uint64_t seed) {
  if (nh_grid.empty() || replicates < 2) throw InvalidInput("trace_spread needs N_h values and >= 2 replicates");
  const std::size_t max_nh = *std::max_element(nh_grid.begin(), nh_grid.end());
  if (max_nh < 1) throw InvalidInput("N_h must be >= 1");
  const auto layout = make_layout(points, options);
  const auto saa = std::make_shared<const SaaVectors>(make_saa(points.size(), max_nh * replicates, seed));
  const FitState s(model, theta, layout, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(points.size())), saa);

  std::vector<TraceSpreadRow> rows;
  const char* names[] = {"scale", "range"};
  for (std::size_t j : {kScale, kRange}) {
    for (bool sym : {false, true}) {
      const Eigen::VectorXd samples = trace_samples(s, s.first(j), sym);
      for (std::size_t nh : nh_grid) {
        Eigen::VectorXd est(static_cast<Eigen::Index>(replicates));
        for (std::size_t r = 0; r < replicates; ++r) {
          est(static_cast<Eigen::Index>(r)) =
              samples.segment(static_cast<Eigen::Index>(r * max_nh), static_cast<Eigen::Index>(nh)).mean();
        }
        TraceSpreadRow row;
        row.nh = nh;
        row.parameter = names[j];
        row.estimator = sym ? "symmetrized" : "plain";
        row.mean = est.mean();
        row.std_dev = std::sqrt((est.array() - row.mean).square().sum() / static_cast<double>(replicates - 1));
        row.rel_std = row.std_dev / std::abs(row.mean);
        rows.push_back(row);
      }
    }
  }
  std::sort(rows.begin(), rows.end(), [](const TraceSpreadRow& a, const TraceSpreadRow& b) {
    return std::tie(a.nh, a.parameter, a.estimator) < std::tie(b.nh, b.parameter, b.estimator);
  });
  return rows;
}

// ---------------------------------------------------------------------------
// Likelihood surfaces

struct SurfaceSetting {
  std::size_t level = 0;
  std::size_t rank = kDefaultRank;
};

struct Surface {
  SurfaceSetting setting;
  Eigen::MatrixXd centered;  // theta0 index x theta1 index, minimum subtracted
  double minimum = 0.0;      // uncentered -l_H at the grid argmin
  Eigen::Index argmin0 = 0;
  Eigen::Index argmin1 = 0;
};

/// -l_H over the grid theta0s x theta1s for one HODLR setting. Without a
/// nugget Sigma~(theta0, theta1) = theta0 Sigma~(1, theta1), so one
/// factorization per theta1 gives the whole theta0 column:
///   -l_H = 1/2 log|Sigma~(1, theta1)| + n/2 log theta0 + q / (2 theta0).
/// Ranks above the smallest leaf are kept (global landmarks make them valid).
inline Surface likelihood_surface(const CovarianceModel& model, const PointSet& points, const Eigen::VectorXd& y,
                                  const Eigen::VectorXd& theta0s, const Eigen::VectorXd& theta1s,
                                  const SurfaceSetting& setting) {
  if (model.has_nugget()) throw InvalidInput("likelihood surfaces are over (theta0, theta1) without a nugget");
  if (theta0s.size() < 1 || theta1s.size() < 1) throw InvalidInput("surface grid must not be empty");
  if ((theta0s.array() <= 0.0).any() || (theta1s.array() <= 0.0).any()) {
    throw InvalidInput("surface grid values must be positive");
  }
  HodlrOptions o;
  o.rank = setting.rank;
  o.level = setting.level;
  o.clamp_rank = false;
  const auto layout = make_layout(points, o);
  const double n = static_cast<double>(points.size());

  Surface out;
  out.setting = setting;
  out.centered.resize(theta0s.size(), theta1s.size());
  for (Eigen::Index b = 0; b < theta1s.size(); ++b) {
    const FitState unit(model, Eigen::Vector2d(1.0, theta1s(b)), layout, y);
    const double half_logdet = 0.5 * unit.factor().logdet();
    const double q = unit.quadratic_form();
    for (Eigen::Index a = 0; a < theta0s.size(); ++a) {
      out.centered(a, b) = half_logdet + 0.5 * n * std::log(theta0s(a)) + q / (2.0 * theta0s(a));
    }
  }
  out.minimum = out.centered.minCoeff(&out.argmin0, &out.argmin1);
  out.centered.array() -= out.minimum;
  return out;
}

}  // namespace gphodlr
