#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <tuple>
#include <utility>

#include "gphodlr/errors.hpp"

// Modified Bessel function of the second kind K_nu(z) for real order and z > 0.
//
// Fractional orders use Temme's method: for |mu| <= 1/2 the pair
// (K_mu, K_{mu+1}) comes from Temme's series when z < 2 and from Steed's
// continued fraction (CF2) when z >= 2, then forward recurrence (stable for K)
// raises the order. Half-integer orders use the closed form
// K_{1/2}(z) = sqrt(pi / 2z) e^{-z} and the same recurrence.

namespace gphodlr {

namespace detail {

// Taylor coefficients of 1 / Gamma(1 + x) about x = 0.
inline constexpr std::array<double, 29> kRecipGammaSeries = {
    1.0,
    0.5772156649015328606065,
    -0.655878071520253881077,
    -0.042002635034095235529,
    0.1665386113822914895017,
    -0.04219773455554433674821,
    -0.009621971527876973562115,
    0.007218943246663099542395,
    -0.001165167591859065112114,
    -0.0002152416741149509728157,
    0.0001280502823881161861532,
    -0.00002013485478078823865569,
    -0.000001250493482142670657345,
    0.000001133027231981695882374,
    -2.05633841697760710345e-7,
    6.116095104481415817862e-9,
    5.002007644469222930056e-9,
    -1.181274570487020144588e-9,
    1.043426711691100510492e-10,
    7.78226343990507125405e-12,
    -3.696805618642205708188e-12,
    5.100370287454475979015e-13,
    -2.058326053566506783222e-14,
    -5.34812253942301798237e-15,
    1.226778628238260790159e-15,
    -1.181259301697458769514e-16,
    1.18669225475160033258e-18,
    1.412380655318031781556e-18,
    -2.298745684435370206592e-19,
};

struct TemmeGammas {
  double gam1;   // (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu)
  double gam2;   // (1/Gamma(1-mu) + 1/Gamma(1+mu)) / 2
  double gampl;  // 1/Gamma(1+mu)
  double gammi;  // 1/Gamma(1-mu)
};

// Odd/even parts of the series give gam1 and gam2 without the cancellation a
// direct difference of reciprocal gammas suffers near mu = 0.
inline TemmeGammas temme_gammas(double mu) noexcept {
  double odd = 0.0;
  double even = 0.0;
  const double mu2 = mu * mu;
  // Horner over the even-index and odd-index coefficients separately.
  for (int k = static_cast<int>(kRecipGammaSeries.size()) - 1; k >= 0; --k) {
    if (k % 2 == 0) {
      even = even * mu2 + kRecipGammaSeries[k];
    } else {
      odd = odd * mu2 + kRecipGammaSeries[k];
    }
  }
  // 1/Gamma(1+mu) = even + mu * odd, 1/Gamma(1-mu) = even - mu * odd.
  TemmeGammas g;
  g.gam1 = -odd;
  g.gam2 = even;
  g.gampl = even + mu * odd;
  g.gammi = even - mu * odd;
  return g;
}

// (K_mu(x), K_{mu+1}(x)) for |mu| <= 1/2, x > 0.
inline std::pair<double, double> temme_pair(double mu, double x) {
  constexpr double eps = 1e-17;
  constexpr int max_iter = 100000;
  const double mu2 = mu * mu;
  if (x < 2.0) {
    const double half_x = 0.5 * x;
    const double pimu = std::numbers::pi * mu;
    const double fact = std::abs(pimu) < eps ? 1.0 : pimu / std::sin(pimu);
    double d = -std::log(half_x);
    double e = mu * d;
    const double fact2 = std::abs(e) < eps ? 1.0 : std::sinh(e) / e;
    const TemmeGammas g = temme_gammas(mu);
    double ff = fact * (g.gam1 * std::cosh(e) + g.gam2 * fact2 * d);
    double sum = ff;
    e = std::exp(e);
    double p = 0.5 * e / g.gampl;
    double q = 0.5 / (e * g.gammi);
    double c = 1.0;
    d = half_x * half_x;
    double sum1 = p;
    for (int i = 1; i <= max_iter; ++i) {
      const double di = static_cast<double>(i);
      ff = (di * ff + p + q) / (di * di - mu2);
      c *= d / di;
      p /= di - mu;
      q /= di + mu;
      const double del = c * ff;
      sum += del;
      const double del1 = c * (p - di * ff);
      sum1 += del1;
      if (std::abs(del) < std::abs(sum) * eps) break;
    }
    return {sum, sum1 * 2.0 / x};
  }
  // Steed's CF2 with Thompson-Barnett summation.
  double b = 2.0 * (1.0 + x);
  double d = 1.0 / b;
  double h = d;
  double delh = d;
  double q1 = 0.0;
  double q2 = 1.0;
  const double a1 = 0.25 - mu2;
  double q = a1;
  double c = a1;
  double a = -a1;
  double s = 1.0 + q * delh;
  for (int i = 2; i <= max_iter; ++i) {
    const double di = static_cast<double>(i);
    a -= 2.0 * (di - 1.0);
    c = -a * c / di;
    const double qnew = (q1 - b * q2) / a;
    q1 = q2;
    q2 = qnew;
    q += c * qnew;
    b += 2.0;
    d = 1.0 / (b + a * d);
    delh = (b * d - 1.0) * delh;
    h += delh;
    const double dels = q * delh;
    s += dels;
    if (std::abs(dels / s) < eps) break;
  }
  h = a1 * h;
  const double kmu = std::sqrt(std::numbers::pi / (2.0 * x)) * std::exp(-x) / s;
  const double kmu1 = kmu * (mu + x + 0.5 - h) / x;
  return {kmu, kmu1};
}

inline bool is_half_integer(double order) noexcept {
  const double twice = 2.0 * order;
  return std::abs(twice - std::round(twice)) == 0.0 && std::abs(std::fmod(twice, 2.0)) == 1.0;
}

}  // namespace detail

/// Returns (K_a(z), K_{a+1}(z)) for a >= -1/2 and z > 0.
inline std::pair<double, double> bessel_k_pair(double a, double z) {
  if (!(z > 0.0) || !std::isfinite(z)) {
    throw DomainError("bessel_k: argument must be positive and finite");
  }
  if (!(a >= -0.5) || !std::isfinite(a)) {
    throw DomainError("bessel_k_pair: order must be >= -1/2");
  }
  double lo;
  double hi;
  int steps;
  double mu;
  if (detail::is_half_integer(a)) {
    // Start at (K_{-1/2}, K_{1/2}) = (K_{1/2}, K_{1/2}).
    mu = -0.5;
    lo = std::sqrt(std::numbers::pi / (2.0 * z)) * std::exp(-z);
    hi = lo;
    steps = static_cast<int>(std::lround(a + 0.5));
  } else {
    steps = static_cast<int>(std::floor(a + 0.5));
    mu = a - steps;
    std::tie(lo, hi) = detail::temme_pair(mu, z);
  }
  for (int i = 1; i <= steps; ++i) {
    const double next = 2.0 * (mu + i) / z * hi + lo;
    lo = hi;
    hi = next;
  }
  return {lo, hi};
}

/// Modified Bessel function of the second kind, K_nu(z) = K_{-nu}(z), z > 0.
inline double bessel_k(double nu, double z) {
  if (!std::isfinite(nu)) throw DomainError("bessel_k: order must be finite");
  nu = std::abs(nu);
  if (nu >= 0.5) return bessel_k_pair(nu - 1.0, z).second;
  return bessel_k_pair(-nu, z).first;
}

/// (K_{nu-1}(z), K_nu(z)) for nu > 0, sharing one evaluation.
inline std::pair<double, double> bessel_k_lower_pair(double nu, double z) {
  if (nu >= 0.5) return bessel_k_pair(nu - 1.0, z);
  // K_{nu-1} = K_{1-nu}; the pair starting at -nu yields (K_nu, K_{1-nu}).
  const auto [k_nu, k_one_minus_nu] = bessel_k_pair(-nu, z);
  return {k_one_minus_nu, k_nu};
}

}  // namespace gphodlr
