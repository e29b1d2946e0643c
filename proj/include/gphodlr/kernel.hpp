#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "gphodlr/bessel.hpp"
#include "gphodlr/errors.hpp"

namespace gphodlr {

/// Index of each estimable parameter in a theta vector. The smoothness nu is
/// a fixed model constant and never has an index.
inline constexpr std::size_t kScale = 0;
inline constexpr std::size_t kRange = 1;
inline constexpr std::size_t kNugget = 2;
inline constexpr std::size_t kMaxParams = 3;

/// Value and parameter derivatives of an isotropic kernel at one lag.
struct KernelJet {
  double value = 0.0;
  std::array<double, kMaxParams> grad{};
  std::array<std::array<double, kMaxParams>, kMaxParams> hess{};
};

/// An isotropic covariance K(r; theta) with exact parameter partials.
/// `jet(r, theta, order)` fills the value and, for order >= 1 / 2, the first
/// and second partials in the estimable parameters.
template <class K>
concept IsotropicKernel = requires(const K& k, double r, const Eigen::VectorXd& theta, int order) {
  { k.num_params() } -> std::convertible_to<std::size_t>;
  { k.jet(r, theta, order) } -> std::same_as<KernelJet>;
};

enum class KernelId { matern_standard, matern_alt };

inline std::string_view to_string(KernelId id) {
  switch (id) {
    case KernelId::matern_standard:
      return "matern_standard";
    case KernelId::matern_alt:
      return "matern_alt";
  }
  return "unknown";
}

inline KernelId parse_kernel_id(std::string_view name) {
  if (name == "matern_standard" || name == "matern") return KernelId::matern_standard;
  if (name == "matern_alt" || name == "alt") return KernelId::matern_alt;
  throw InvalidInput("unknown kernel '" + std::string(name) +
                     "' (expected matern_standard or matern_alt)");
}

/// User-facing parameter set: scale, range, fixed smoothness and an optional
/// nugget variance.
struct ParameterVector {
  double theta0 = 1.0;
  double theta1 = 1.0;
  double nu = 1.0;
  std::optional<double> nugget;

  void validate() const {
    auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
    if (!positive(theta0)) throw InvalidInput("theta0 (scale) must be positive and finite");
    if (!positive(theta1)) throw InvalidInput("theta1 (range) must be positive and finite");
    if (!positive(nu)) throw InvalidInput("nu (smoothness) must be positive and finite");
    if (nugget && !(std::isfinite(*nugget) && *nugget >= 0.0)) {
      throw InvalidInput("nugget must be non-negative and finite");
    }
  }

  /// The estimable components in index order (kScale, kRange[, kNugget]).
  Eigen::VectorXd estimable() const {
    Eigen::VectorXd theta(nugget ? 3 : 2);
    theta(kScale) = theta0;
    theta(kRange) = theta1;
    if (nugget) theta(kNugget) = *nugget;
    return theta;
  }
};

/// Matern covariance in either parameterization, optionally with a nugget
/// delta * 1{x = y} as a third estimable parameter.
///
///   standard:    theta0 * M_nu(r / theta1),
///                M_nu(x) = (2^{nu-1} Gamma(nu))^{-1} (sqrt(2nu) x)^nu K_nu(sqrt(2nu) x)
///   alternative: theta0 * (theta1 r / (2 sqrt(nu)))^nu K_nu(2 sqrt(nu) r / theta1)
///
/// Both are theta0 * c(theta1) * phi(w) with phi(w) = w^nu K_nu(w) and
/// w = s r / theta1, which gives every partial through
/// phi'(w) = -w^nu K_{nu-1}(w).
class CovarianceModel {
 public:
  CovarianceModel(KernelId id, double nu, bool nugget = false)
      : id_(id), nu_(nu), nugget_(nugget) {
    if (!(std::isfinite(nu) && nu > 0.0)) throw InvalidInput("nu must be positive and finite");
    stretch_ = id == KernelId::matern_standard ? std::sqrt(2.0 * nu) : 2.0 * std::sqrt(nu);
    phi_at_zero_ = std::tgamma(nu) * std::pow(2.0, nu - 1.0);
  }

  KernelId id() const noexcept { return id_; }
  double nu() const noexcept { return nu_; }
  bool has_nugget() const noexcept { return nugget_; }
  std::size_t num_params() const noexcept { return nugget_ ? 3 : 2; }

  KernelJet jet(double r, const Eigen::VectorXd& theta, int order) const {
    check_theta(theta);
    const double theta0 = theta(kScale);
    const double theta1 = theta(kRange);
    const double w = stretch_ * r / theta1;

    // c(theta1) and its first two derivatives.
    double c;
    double dc = 0.0;
    double ddc = 0.0;
    if (id_ == KernelId::matern_standard) {
      c = 1.0 / phi_at_zero_;
    } else {
      c = std::pow(theta1 / stretch_, 2.0 * nu_);
      dc = 2.0 * nu_ * c / theta1;
      ddc = 2.0 * nu_ * (2.0 * nu_ - 1.0) * c / (theta1 * theta1);
    }

    double phi;
    double a_term = 0.0;  // w^{nu+1} K_{nu-1}(w), vanishes at w = 0
    if (w == 0.0) {
      phi = phi_at_zero_;
    } else {
      const auto [k_lower, k_nu] = bessel_k_lower_pair(nu_, w);
      const double w_pow = std::pow(w, nu_);
      phi = w_pow * k_nu;
      a_term = w_pow * w * k_lower;
    }

    const double h = c * phi;
    KernelJet out;
    out.value = theta0 * h;
    if (order >= 1) {
      const double dh = dc * phi + c * a_term / theta1;
      out.grad[kScale] = h;
      out.grad[kRange] = theta0 * dh;
      if (order >= 2) {
        const double ddh = ddc * phi + 2.0 * dc * a_term / theta1 +
                           c * (w * w * phi - (2.0 * nu_ + 1.0) * a_term) / (theta1 * theta1);
        out.hess[kScale][kScale] = 0.0;
        out.hess[kScale][kRange] = dh;
        out.hess[kRange][kScale] = dh;
        out.hess[kRange][kRange] = theta0 * ddh;
      }
    }
    if (nugget_ && r == 0.0) {
      out.value += theta(kNugget);
      if (order >= 1) out.grad[kNugget] = 1.0;
    }
    return out;
  }

 private:
  void check_theta(const Eigen::VectorXd& theta) const {
    if (static_cast<std::size_t>(theta.size()) != num_params()) {
      throw DimensionMismatch("CovarianceModel theta", num_params(),
                              static_cast<std::size_t>(theta.size()));
    }
    if (!theta.allFinite()) throw InvalidInput("kernel parameters must be finite");
    if (!(theta(kScale) >= 0.0)) throw InvalidInput("theta0 (scale) must be non-negative");
    if (!(theta(kRange) > 0.0)) throw InvalidInput("theta1 (range) must be positive");
  }

  KernelId id_;
  double nu_;
  bool nugget_;
  double stretch_;
  double phi_at_zero_;
};

static_assert(IsotropicKernel<CovarianceModel>);

namespace detail {

template <class Vec>
double checked_distance(const Vec& x, const Vec& y) {
  if (x.size() != y.size()) {
    throw DimensionMismatch("kernel points", static_cast<std::size_t>(x.size()),
                            static_cast<std::size_t>(y.size()));
  }
  if (x.size() == 0) throw InvalidInput("points must have dimension >= 1");
  if (!x.allFinite() || !y.allFinite()) throw InvalidInput("non-finite point coordinates");
  return (x - y).norm();
}

inline void check_index(std::size_t num_params, std::size_t j) {
  if (j >= num_params) {
    throw UnsupportedParameter("parameter index " + std::to_string(j) +
                               " is not estimable (nu is fixed)");
  }
}

}  // namespace detail

/// K(x, y; theta).
template <IsotropicKernel Kernel>
double eval(const Kernel& kernel, const Eigen::Ref<const Eigen::VectorXd>& x,
            const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::VectorXd& theta) {
  return kernel.jet(detail::checked_distance(x, y), theta, 0).value;
}

/// dK/dtheta_j.
template <IsotropicKernel Kernel>
double kernel_partial(const Kernel& kernel, std::size_t j, const Eigen::Ref<const Eigen::VectorXd>& x,
                      const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::VectorXd& theta) {
  detail::check_index(kernel.num_params(), j);
  return kernel.jet(detail::checked_distance(x, y), theta, 1).grad[j];
}

/// d^2K/dtheta_j dtheta_k.
template <IsotropicKernel Kernel>
double kernel_partial2(const Kernel& kernel, std::size_t j, std::size_t k,
                       const Eigen::Ref<const Eigen::VectorXd>& x,
                       const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::VectorXd& theta) {
  detail::check_index(kernel.num_params(), j);
  detail::check_index(kernel.num_params(), k);
  return kernel.jet(detail::checked_distance(x, y), theta, 2).hess[j][k];
}

/// Standard Matern covariance theta0 * M_nu(|x - y| / theta1).
inline double matern_standard(const Eigen::Ref<const Eigen::VectorXd>& x,
                              const Eigen::Ref<const Eigen::VectorXd>& y, const ParameterVector& p) {
  const CovarianceModel model(KernelId::matern_standard, p.nu);
  return eval(model, x, y, Eigen::Vector2d(p.theta0, p.theta1));
}

/// Alternative Matern parameterization
/// theta0 * (theta1 |x - y| / (2 sqrt(nu)))^nu K_nu(2 sqrt(nu) |x - y| / theta1).
inline double matern_alt(const Eigen::Ref<const Eigen::VectorXd>& x,
                         const Eigen::Ref<const Eigen::VectorXd>& y, const ParameterVector& p) {
  const CovarianceModel model(KernelId::matern_alt, p.nu);
  return eval(model, x, y, Eigen::Vector2d(p.theta0, p.theta1));
}

}  // namespace gphodlr
