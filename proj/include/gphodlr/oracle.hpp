#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <utility>
#include <vector>

#include "gphodlr/derivatives.hpp"
#include "gphodlr/errors.hpp"
#include "gphodlr/geometry.hpp"
#include "gphodlr/hodlr.hpp"
#include "gphodlr/kernel.hpp"
#include "gphodlr/linalg.hpp"
#include "gphodlr/parallel.hpp"
#include "gphodlr/random.hpp"

namespace gphodlr {

/// Dense covariance matrix with its Cholesky factor and on-demand derivative
/// matrices. Brute-force reference for every quantity the fast path
/// approximates.
///
/// Derivatives come from providers so that only one n x n derivative matrix
/// needs to be alive at a time. When the covariance is linear in the scale
/// theta0 (no nugget), `scale_theta0` enables the closed forms
/// Sigma^{-1} Sigma_0 = I / theta0.
class DenseModel {
 public:
  using FirstProvider = std::function<Eigen::MatrixXd(std::size_t)>;
  using SecondProvider = std::function<Eigen::MatrixXd(std::size_t, std::size_t)>;

  DenseModel(Eigen::MatrixXd cov, std::size_t num_params, FirstProvider first, SecondProvider second,
             std::optional<double> scale_theta0 = std::nullopt, std::size_t cap = kDefaultDenseCap)
      : cov_(std::move(cov)),
        num_params_(num_params),
        first_(std::move(first)),
        second_(std::move(second)),
        scale_theta0_(scale_theta0) {
    const auto n = static_cast<std::size_t>(cov_.rows());
    if (n > cap) throw CapExceeded("dense model", n, cap);
    if (cov_.rows() != cov_.cols()) throw DimensionMismatch("dense covariance", n, cov_.cols());
    Eigen::LLT<Eigen::MatrixXd> llt(cov_);
    if (llt.info() != Eigen::Success || !llt.matrixLLT().diagonal().allFinite()) {
      throw NotPositiveDefinite("dense covariance Cholesky");
    }
    lower_ = llt.matrixL();
    logdet_ = cholesky_logdet(lower_);
  }

  std::size_t n() const noexcept { return static_cast<std::size_t>(cov_.rows()); }
  std::size_t num_params() const noexcept { return num_params_; }
  const Eigen::MatrixXd& cov() const noexcept { return cov_; }
  const Eigen::MatrixXd& lower() const noexcept { return lower_; }
  double logdet() const noexcept { return logdet_; }
  const std::optional<double>& scale_theta0() const noexcept { return scale_theta0_; }

  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const {
    detail::check_rows("dense solve", n(), b.rows());
    Eigen::MatrixXd x = lower_.triangularView<Eigen::Lower>().solve(b);
    lower_.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
    return x;
  }

  /// Sigma^{-1}, computed once.
  const Eigen::MatrixXd& inverse() const {
    std::call_once(inverse_once_, [&] { inverse_ = inverse_from_cholesky(lower_); });
    return inverse_;
  }

  Eigen::MatrixXd first(std::size_t j) const {
    if (j >= num_params_) throw UnsupportedParameter("parameter index out of range");
    return first_(j);
  }
  Eigen::MatrixXd second(std::size_t j, std::size_t k) const {
    if (j >= num_params_ || k >= num_params_) throw UnsupportedParameter("parameter index out of range");
    if (!second_) throw InvalidInput("dense model has no second derivatives");
    return second_(std::min(j, k), std::max(j, k));
  }

 private:
  Eigen::MatrixXd cov_;
  std::size_t num_params_;
  FirstProvider first_;
  SecondProvider second_;
  std::optional<double> scale_theta0_;
  Eigen::MatrixXd lower_;
  double logdet_ = 0.0;
  mutable std::once_flag inverse_once_;
  mutable Eigen::MatrixXd inverse_;
};

namespace detail {

// Dense matrix of one kernel-jet component over all pairs of points.
template <class Pick>
Eigen::MatrixXd dense_jet_matrix(const CovarianceModel& model, const Eigen::VectorXd& theta,
                                 const PointSet& points, int order, Pick pick) {
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd out(n, n);
  const Eigen::MatrixXd& c = points.coords();
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t col) {
    const auto j = static_cast<Eigen::Index>(col);
    for (Eigen::Index i = j; i < n; ++i) {
      out(i, j) = pick(model.jet(column_distance(c, i, j), theta, order));
    }
  });
  out.triangularView<Eigen::StrictlyUpper>() = out.transpose();
  return out;
}

}  // namespace detail

/// Exact kernel matrix K(x_i, x_j; theta) in the given point order.
inline Eigen::MatrixXd dense_kernel_matrix(const CovarianceModel& model, const Eigen::VectorXd& theta,
                                           const PointSet& points, std::size_t cap = kDefaultDenseCap) {
  if (points.size() > cap) throw CapExceeded("dense kernel matrix", points.size(), cap);
  return detail::dense_jet_matrix(model, theta, points, 0, [](const KernelJet& k) { return k.value; });
}

/// Oracle on the exact kernel matrix (original point order).
inline DenseModel dense_kernel_model(const CovarianceModel& model, const Eigen::VectorXd& theta,
                                     const PointSet& points, std::size_t cap = kDefaultDenseCap) {
  if (points.size() > cap) throw CapExceeded("dense kernel model", points.size(), cap);
  auto pts = std::make_shared<const PointSet>(points);
  auto first = [model, theta, pts](std::size_t j) {
    return detail::dense_jet_matrix(model, theta, *pts, 1, [j](const KernelJet& k) { return k.grad[j]; });
  };
  auto second = [model, theta, pts](std::size_t j, std::size_t k) {
    return detail::dense_jet_matrix(model, theta, *pts, 2,
                                    [j, k](const KernelJet& jet) { return jet.hess[j][k]; });
  };
  std::optional<double> scale;
  if (!model.has_nugget()) scale = theta(kScale);
  return DenseModel(dense_kernel_matrix(model, theta, points, cap), model.num_params(), first, second,
                    scale, cap);
}

/// Oracle on the densified HODLR approximation and its exact derivatives
/// (tree order): the exact counterpart of every stochastic estimate of l_H.
inline DenseModel dense_hodlr_model(const HodlrMatrix& h, std::size_t cap = kDefaultDenseCap) {
  auto parent = std::make_shared<const HodlrMatrix>(h);
  auto first = [parent, cap](std::size_t j) { return to_dense(assemble_derivative(*parent, j), cap); };
  auto second = [parent, cap](std::size_t j, std::size_t k) {
    return to_dense(assemble_second_derivative(*parent, j, k), cap);
  };
  std::optional<double> scale;
  if (!h.model().has_nugget()) scale = h.theta()(kScale);
  return DenseModel(to_dense(h, cap), h.model().num_params(), first, second, scale, cap);
}

/// -l = 1/2 log|Sigma| + 1/2 y^T Sigma^{-1} y.
inline double exact_neg_loglik(const DenseModel& d, const Eigen::VectorXd& y) {
  detail::check_rows("observation vector", d.n(), y.size());
  const Eigen::VectorXd w = d.lower().triangularView<Eigen::Lower>().solve(y);
  return 0.5 * d.logdet() + 0.5 * w.squaredNorm();
}

/// Value, gradient, expected Fisher and Hessian of -l with exact traces.
struct ExactDerivatives {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd fisher;   // empty unless requested
  Eigen::MatrixXd hessian;  // empty unless requested
};

/// order 1: value and gradient; order 2 adds Fisher and Hessian; `fisher_only`
/// with order 2 skips the Hessian.
inline ExactDerivatives exact_derivatives(const DenseModel& d, const Eigen::VectorXd& y, int order,
                                          bool fisher_only = false) {
  const std::size_t m = d.num_params();
  const auto n = static_cast<Eigen::Index>(d.n());
  ExactDerivatives out;
  out.value = exact_neg_loglik(d, y);
  if (order < 1) return out;

  const Eigen::VectorXd alpha = d.solve(y);
  const Eigen::MatrixXd& inv = d.inverse();
  const auto& scale = d.scale_theta0();
  out.gradient.resize(static_cast<Eigen::Index>(m));
  std::vector<Eigen::VectorXd> beta(m);
  std::vector<Eigen::MatrixXd> x(m);  // Sigma^{-1} Sigma_j, skipped for the scale
  std::vector<double> trace(m);
  for (std::size_t j = 0; j < m; ++j) {
    if (scale && j == kScale) {
      beta[j] = d.cov() * alpha / *scale;
      trace[j] = static_cast<double>(n) / *scale;
    } else {
      const Eigen::MatrixXd dj = d.first(j);
      beta[j] = dj * alpha;
      trace[j] = (inv.array() * dj.array()).sum();
      if (order >= 2) x[j] = inv * dj;
    }
    out.gradient(static_cast<Eigen::Index>(j)) = 0.5 * trace[j] - 0.5 * alpha.dot(beta[j]);
  }
  if (order < 2) return out;

  // I_jk = 1/2 tr(Sigma^{-1} Sigma_j Sigma^{-1} Sigma_k).
  auto is_scale = [&](std::size_t j) { return scale && j == kScale; };
  out.fisher.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t k = j; k < m; ++k) {
      double t;
      if (is_scale(j) && is_scale(k)) {
        t = static_cast<double>(n) / (*scale * *scale);
      } else if (is_scale(j)) {
        t = trace[k] / *scale;
      } else if (is_scale(k)) {
        t = trace[j] / *scale;
      } else {
        t = (x[j].array() * x[k].transpose().array()).sum();
      }
      out.fisher(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) =
          out.fisher(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = 0.5 * t;
    }
  }
  if (fisher_only) return out;
  x.clear();

  out.hessian.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  std::vector<Eigen::VectorXd> solved_beta(m);
  for (std::size_t j = 0; j < m; ++j) solved_beta[j] = d.solve(beta[j]);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t k = j; k < m; ++k) {
      double trace_jk;
      double quad_jk;
      if (is_scale(j) && is_scale(k)) {
        trace_jk = 0.0;
        quad_jk = 0.0;
      } else if (is_scale(j) || is_scale(k)) {
        // Sigma_{0k} = Sigma_k / theta0.
        const std::size_t other = is_scale(j) ? k : j;
        trace_jk = trace[other] / *scale;
        quad_jk = alpha.dot(beta[other]) / *scale;
      } else {
        const Eigen::MatrixXd djk = d.second(j, k);
        trace_jk = (inv.array() * djk.array()).sum();
        quad_jk = alpha.dot(djk * alpha);
      }
      const double value = 0.5 * trace_jk -
                           out.fisher(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) +
                           beta[j].dot(solved_beta[k]) - 0.5 * quad_jk;
      out.hessian(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) =
          out.hessian(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = value;
    }
  }
  return out;
}

inline Eigen::VectorXd exact_gradient(const DenseModel& d, const Eigen::VectorXd& y) {
  return exact_derivatives(d, y, 1).gradient;
}

inline Eigen::MatrixXd exact_fisher(const DenseModel& d) {
  return exact_derivatives(d, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d.n())), 2, true).fisher;
}

inline Eigen::MatrixXd exact_hessian(const DenseModel& d, const Eigen::VectorXd& y) {
  return exact_derivatives(d, y, 2).hessian;
}

/// Exact trace tr(Sigma^{-1} A) for a dense symmetric A.
inline double exact_trace(const DenseModel& d, const Eigen::MatrixXd& a) {
  return (d.inverse().array() * a.array()).sum();
}

/// 2-norm condition number of the covariance (diagnostic only).
inline double condition_number(const DenseModel& d) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(d.cov(), Eigen::EigenvaluesOnly);
  return eig.eigenvalues().maxCoeff() / eig.eigenvalues().minCoeff();
}

/// `count` independent draws y = L z of a zero-mean GP on `points` (original
/// order), z from NormalGenerator(seed) column by column. Column 0 equals
/// simulate_gp with the same seed.
inline Eigen::MatrixXd simulate_gp_batch(const CovarianceModel& model, const Eigen::VectorXd& theta,
                                         const PointSet& points, std::uint64_t seed, std::size_t count,
                                         std::size_t cap = kDefaultDenseCap) {
  if (points.size() > cap) throw CapExceeded("simulate_gp (raise --dense-cap)", points.size(), cap);
  const CholeskyFactor f =
      jittered_cholesky(dense_kernel_matrix(model, theta, points, cap), "simulation covariance");
  const auto n = static_cast<Eigen::Index>(points.size());
  NormalGenerator normal(seed);
  Eigen::MatrixXd z(n, static_cast<Eigen::Index>(count));
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    for (Eigen::Index i = 0; i < n; ++i) z(i, c) = normal();
  }
  return f.lower.triangularView<Eigen::Lower>() * z;
}

inline Eigen::VectorXd simulate_gp(const CovarianceModel& model, const Eigen::VectorXd& theta,
                                   const PointSet& points, std::uint64_t seed,
                                   std::size_t cap = kDefaultDenseCap) {
  return simulate_gp_batch(model, theta, points, seed, 1, cap).col(0);
}

}  // namespace gphodlr
