#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <mutex>
#include <utility>
#include <vector>

#include "gphodlr/derivatives.hpp"
#include "gphodlr/errors.hpp"
#include "gphodlr/factor.hpp"
#include "gphodlr/hodlr.hpp"
#include "gphodlr/random.hpp"

namespace gphodlr {

inline constexpr std::size_t kDefaultSaaCount = 35;

/// Fixed Rademacher probe vectors for the trace estimators.
///
/// Entry (i, l) depends only on (seed, l, i) with i the original point index,
/// so the same seed gives the same probes for any ordering or thread count.
struct SaaVectors {
  Eigen::MatrixXd vectors;  // n x count, original point order
  std::uint64_t seed = 0;

  std::size_t count() const noexcept { return static_cast<std::size_t>(vectors.cols()); }
  std::size_t n() const noexcept { return static_cast<std::size_t>(vectors.rows()); }
};

inline SaaVectors make_saa(std::size_t n, std::size_t count, std::uint64_t seed) {
  if (count < 1) throw InvalidInput("need at least one SAA vector");
  SaaVectors s;
  s.seed = seed;
  s.vectors.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(count));
  for (std::size_t l = 0; l < count; ++l) {
    for (std::size_t i = 0; i < n; ++i) {
      s.vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) = rademacher(seed, l, i);
    }
  }
  return s;
}

/// Everything the likelihood and its estimators need at one theta.
///
/// Built once per theta and read-only afterwards. The derivative matrices and
/// the solves that feed several estimators are computed on first use and
/// cached: Sigma~^{-1} y, W^{-T} U, W^{-1} Sigma~_j W^{-T} U, Sigma~_j Sigma~^{-1} y
/// and its W^{-1} image. Lazy members are guarded, so concurrent readers are
/// safe.
class FitState {
 public:
  /// `y` and the probe vectors are in original point order.
  FitState(const CovarianceModel& model, const Eigen::VectorXd& theta,
           std::shared_ptr<const HodlrLayout> layout, const Eigen::VectorXd& y,
           std::shared_ptr<const SaaVectors> saa = nullptr)
      : hodlr_(model, theta, std::move(layout)), saa_(std::move(saa)) {
    const std::size_t n = hodlr_.n();
    detail::check_rows("observation vector", n, y.size());
    if (!y.allFinite()) throw InvalidInput("observations must be finite");
    y_ = hodlr_.layout().plan.to_tree_order(y);
    if (saa_) {
      detail::check_rows("SAA vectors", n, saa_->vectors.rows());
      const auto& perm = hodlr_.layout().plan.permutation;
      u_.resize(saa_->vectors.rows(), saa_->vectors.cols());
      for (std::size_t k = 0; k < n; ++k) {
        u_.row(static_cast<Eigen::Index>(k)) = saa_->vectors.row(static_cast<Eigen::Index>(perm[k]));
      }
    }
    factor_ = symmetric_factorize(hodlr_);
    alpha_ = solve(factor_, y_);
  }

  FitState(const FitState&) = delete;
  FitState& operator=(const FitState&) = delete;

  std::size_t n() const noexcept { return hodlr_.n(); }
  std::size_t num_params() const noexcept { return hodlr_.model().num_params(); }
  const Eigen::VectorXd& theta() const noexcept { return hodlr_.theta(); }
  const CovarianceModel& model() const noexcept { return hodlr_.model(); }
  const HodlrMatrix& hodlr() const noexcept { return hodlr_; }
  const SymmetricFactor& factor() const noexcept { return factor_; }
  const HodlrLayout& layout() const noexcept { return hodlr_.layout(); }

  /// Tree-ordered observations and Sigma~^{-1} y.
  const Eigen::VectorXd& y() const noexcept { return y_; }
  const Eigen::VectorXd& alpha() const noexcept { return alpha_; }
  double quadratic_form() const { return y_.dot(alpha_); }

  bool has_saa() const noexcept { return static_cast<bool>(saa_); }
  std::size_t saa_count() const { return static_cast<std::size_t>(probes().cols()); }
  /// Tree-ordered probe vectors U.
  const Eigen::MatrixXd& probes() const {
    if (!saa_) throw InvalidInput("this state was built without SAA vectors");
    return u_;
  }

  /// W^{-T} U.
  const Eigen::MatrixXd& whitened_probes() const {
    std::call_once(whitened_once_, [&] { w_u_ = factor_.solve(Side::transpose, probes()); });
    return w_u_;
  }

  const DerivativeHodlr& first(std::size_t j) const {
    ensure_first();
    if (j >= num_params()) throw UnsupportedParameter("parameter index out of range");
    return first_[j];
  }

  const DerivativeHodlr& second(std::size_t j, std::size_t k) const {
    std::call_once(second_once_, [&] {
      second_ = std::make_unique<DerivativeSet>(build_derivatives(hodlr_, true));
    });
    return second_->hessian_term(j, k);
  }

  /// W^{-1} Sigma~_j W^{-T} U.
  const Eigen::MatrixXd& z(std::size_t j) const {
    ensure_first();
    std::call_once(z_once_, [&] {
      const Eigen::MatrixXd& w_u = whitened_probes();
      z_.resize(num_params());
      for (std::size_t i = 0; i < num_params(); ++i) {
        z_[i] = factor_.solve(Side::direct, deriv_apply(first_[i], w_u));
      }
    });
    return z_.at(j);
  }

  /// Sigma~_j Sigma~^{-1} y.
  const Eigen::VectorXd& beta(std::size_t j) const {
    ensure_first();
    return beta_.at(j);
  }

  /// W^{-1} Sigma~_j Sigma~^{-1} y.
  const Eigen::VectorXd& gamma(std::size_t j) const {
    ensure_first();
    return gamma_.at(j);
  }

 private:
  void ensure_first() const {
    std::call_once(first_once_, [&] {
      DerivativeSet set = build_derivatives(hodlr_, false);
      first_ = std::move(set.first);
      beta_.resize(first_.size());
      gamma_.resize(first_.size());
      for (std::size_t j = 0; j < first_.size(); ++j) {
        beta_[j] = deriv_matvec(first_[j], alpha_);
        gamma_[j] = factor_.solve(Side::direct, beta_[j]);
      }
    });
  }

  HodlrMatrix hodlr_;
  SymmetricFactor factor_;
  std::shared_ptr<const SaaVectors> saa_;
  Eigen::VectorXd y_;
  Eigen::MatrixXd u_;
  Eigen::VectorXd alpha_;

  mutable std::once_flag whitened_once_;
  mutable Eigen::MatrixXd w_u_;
  mutable std::once_flag first_once_;
  mutable std::vector<DerivativeHodlr> first_;
  mutable std::vector<Eigen::VectorXd> beta_;
  mutable std::vector<Eigen::VectorXd> gamma_;
  mutable std::once_flag second_once_;
  mutable std::unique_ptr<DerivativeSet> second_;
  mutable std::once_flag z_once_;
  mutable std::vector<Eigen::MatrixXd> z_;
};

/// -l_H = 1/2 log|Sigma~| + 1/2 y^T Sigma~^{-1} y (mean zero, 2 pi constant dropped).
inline double neg_loglik(const FitState& s) {
  return 0.5 * s.factor().logdet() + 0.5 * s.quadratic_form();
}

/// Per-probe trace samples of tr(Sigma~^{-1} D):
///   symmetrized  u^T W^{-1} D W^{-T} u
///   plain        u^T Sigma~^{-1} D u
inline Eigen::VectorXd trace_samples(const FitState& s, const DerivativeHodlr& d, bool symmetrized) {
  detail::check_rows("trace estimate", s.n(), static_cast<Eigen::Index>(d.n()));
  if (symmetrized) {
    const Eigen::MatrixXd& w_u = s.whitened_probes();
    return (w_u.array() * deriv_apply(d, w_u).array()).colwise().sum().transpose();
  }
  const Eigen::MatrixXd& u = s.probes();
  const Eigen::MatrixXd solved = solve(s.factor(), u);
  return (solved.array() * deriv_apply(d, u).array()).colwise().sum().transpose();
}

/// Same estimators with a HODLR matrix in place of a derivative.
inline Eigen::VectorXd trace_samples(const FitState& s, const HodlrMatrix& d, bool symmetrized) {
  detail::check_rows("trace estimate", s.n(), static_cast<Eigen::Index>(d.n()));
  if (symmetrized) {
    const Eigen::MatrixXd& w_u = s.whitened_probes();
    return (w_u.array() * apply(d, w_u).array()).colwise().sum().transpose();
  }
  const Eigen::MatrixXd& u = s.probes();
  const Eigen::MatrixXd solved = solve(s.factor(), u);
  return (solved.array() * apply(d, u).array()).colwise().sum().transpose();
}

inline double trace_estimate(const FitState& s, const DerivativeHodlr& d, bool symmetrized = true) {
  return trace_samples(s, d, symmetrized).mean();
}

inline double trace_estimate(const FitState& s, const HodlrMatrix& d, bool symmetrized = true) {
  return trace_samples(s, d, symmetrized).mean();
}

/// Stochastic gradient of -l_H:
///   g_j = 1/(2N) sum_l u_l^T W^{-1} Sigma~_j W^{-T} u_l - 1/2 y^T Sigma~^{-1} Sigma~_j Sigma~^{-1} y.
inline Eigen::VectorXd stoch_gradient(const FitState& s) {
  const std::size_t m = s.num_params();
  const double big_n = static_cast<double>(s.saa_count());
  const Eigen::MatrixXd& w_u = s.whitened_probes();
  Eigen::VectorXd g(static_cast<Eigen::Index>(m));
  for (std::size_t j = 0; j < m; ++j) {
    const double trace =
        (w_u.array() * deriv_apply(s.first(j), w_u).array()).sum() / (2.0 * big_n);
    g(static_cast<Eigen::Index>(j)) = trace - 0.5 * s.alpha().dot(s.beta(j));
  }
  return g;
}

/// Symmetrized expected Fisher estimate. Diagonal entries are
/// 1/(2N) sum ||W^{-1} Sigma~_j W^{-T} u_l||^2, off-diagonal ones come from the
/// same quantity for Sigma~_j + Sigma~_k by polarization. Positive
/// semidefinite because all entries share one probe set.
inline Eigen::MatrixXd stoch_fisher(const FitState& s) {
  const std::size_t m = s.num_params();
  const double big_n = static_cast<double>(s.saa_count());
  Eigen::MatrixXd f(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (std::size_t j = 0; j < m; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    f(jj, jj) = s.z(j).squaredNorm() / (2.0 * big_n);
  }
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t k = j + 1; k < m; ++k) {
      const auto jj = static_cast<Eigen::Index>(j);
      const auto kk = static_cast<Eigen::Index>(k);
      const double both = (s.z(j) + s.z(k)).squaredNorm() / (4.0 * big_n);
      f(jj, kk) = f(kk, jj) = both - 0.5 * f(jj, jj) - 0.5 * f(kk, kk);
    }
  }
  return f;
}

/// Stochastic Hessian of -l_H:
///   H_jk = 1/(2N) sum_l u_l^T W^{-1} Sigma~_jk W^{-T} u_l - I^_jk
///          + y^T Sigma~^{-1} Sigma~_j Sigma~^{-1} Sigma~_k Sigma~^{-1} y
///          - 1/2 y^T Sigma~^{-1} Sigma~_jk Sigma~^{-1} y.
inline Eigen::MatrixXd stoch_hessian(const FitState& s, const Eigen::MatrixXd& fisher) {
  const std::size_t m = s.num_params();
  const double big_n = static_cast<double>(s.saa_count());
  const Eigen::MatrixXd& w_u = s.whitened_probes();
  Eigen::MatrixXd h(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t k = j; k < m; ++k) {
      const DerivativeHodlr& d = s.second(j, k);
      const auto jj = static_cast<Eigen::Index>(j);
      const auto kk = static_cast<Eigen::Index>(k);
      const double trace = (w_u.array() * deriv_apply(d, w_u).array()).sum() / (2.0 * big_n);
      const double quad = s.gamma(j).dot(s.gamma(k)) - 0.5 * s.alpha().dot(deriv_matvec(d, s.alpha()));
      h(jj, kk) = h(kk, jj) = trace - fisher(jj, kk) + quad;
    }
  }
  return h;
}

inline Eigen::MatrixXd stoch_hessian(const FitState& s) { return stoch_hessian(s, stoch_fisher(s)); }

struct ProfileValue {
  double value = 0.0;       // 1/2 log|Sigma~(1, .)| + n/2 log q
  double theta0_hat = 0.0;  // q / n
  double quadratic = 0.0;   // q = y^T Sigma~(1, .)^{-1} y
};

/// Negative profile log-likelihood from a state assembled at theta0 = 1.
inline ProfileValue profile(const FitState& s) {
  if (s.theta()(kScale) != 1.0) throw InvalidInput("profile needs a state assembled at theta0 = 1");
  const double q = s.quadratic_form();
  if (!(q > 0.0) || !std::isfinite(q)) {
    throw NotPositiveDefinite("profile: quadratic form y^T Sigma~^{-1} y is not positive");
  }
  const double n = static_cast<double>(s.n());
  return {0.5 * s.factor().logdet() + 0.5 * n * std::log(q), q / n, q};
}

struct ErrorMetrics {
  double eta_g = 0.0;
  double eta_fisher = 0.0;  // +inf when the estimate is not positive definite
  double rel_gradient = 0.0;
  double rel_fisher = 0.0;
};

/// Reparameterization-invariant accuracy of a gradient and Fisher estimate:
///   eta_g = sqrt((g^ - g)^T I^{-1} (g^ - g))
///   eta_I = sqrt(tr{(I^ - I)(I^{-1} - I^^{-1})})
/// plus plain relative errors (Euclidean / Frobenius).
inline ErrorMetrics error_metrics(const Eigen::VectorXd& approx_grad, const Eigen::VectorXd& exact_grad,
                                  const Eigen::MatrixXd& approx_fisher,
                                  const Eigen::MatrixXd& exact_fisher) {
  const auto m = exact_grad.size();
  if (approx_grad.size() != m || exact_fisher.rows() != m || exact_fisher.cols() != m ||
      approx_fisher.rows() != m || approx_fisher.cols() != m) {
    throw DimensionMismatch("error_metrics", static_cast<std::size_t>(m),
                            static_cast<std::size_t>(approx_fisher.rows()));
  }
  const Eigen::LLT<Eigen::MatrixXd> exact(exact_fisher);
  if (exact.info() != Eigen::Success) throw NotPositiveDefinite("error_metrics: exact Fisher");
  ErrorMetrics e;
  const Eigen::VectorXd diff = approx_grad - exact_grad;
  e.eta_g = std::sqrt(std::max(0.0, diff.dot(exact.solve(diff))));
  const Eigen::LLT<Eigen::MatrixXd> approx(approx_fisher);
  if (approx.info() != Eigen::Success || (approx.matrixLLT().diagonal().array() <= 0.0).any()) {
    e.eta_fisher = std::numeric_limits<double>::infinity();
  } else {
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(m, m);
    const Eigen::MatrixXd t = (approx_fisher - exact_fisher) * (exact.solve(eye) - approx.solve(eye));
    e.eta_fisher = std::sqrt(std::max(0.0, t.trace()));
  }
  e.rel_gradient = diff.norm() / exact_grad.norm();
  e.rel_fisher = (approx_fisher - exact_fisher).norm() / exact_fisher.norm();
  return e;
}

}  // namespace gphodlr
