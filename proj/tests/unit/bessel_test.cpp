#include <gtest/gtest.h>

#include <boost/math/special_functions/bessel.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include <cmath>
#include <numbers>

#include "gphodlr/bessel.hpp"

using gphodlr::bessel_k;

namespace {

struct Reference {
  double nu;
  double z;
  double value;
};

// 40-digit values from mpmath.besselk.
constexpr Reference kTable[] = {
    {0.25, 0.01, 6.1657412641392401118},
    {0.25, 1.5, 0.21735815698180042599},
    {0.3, 7.0, 0.00042736373082278935584},
    {0.75, 0.2, 3.1516010863828756987},
    {1.0, 1.0, 0.60190723019723457474},
    {1.0, 2.0, 0.13986588181652242728},
    {1.25, 3.3, 0.030289267510445520821},
    {1.7, 0.9, 1.4216866264160692811},
    {2.2, 19.0, 1.8121134736167861192e-9},
    {3.0, 0.05, 63980.006239507651875},
    {3.5, 4.0, 0.042144402742232696202},
    {4.4, 12.5, 2.7411166552545214319e-6},
    {5.0, 50.0, 4.3671822541009863293e-23},
    {5.0, 0.001, 383999976000000960.03},
    {0.5, 1.0, 0.46106850444789455844},
    {1.5, 2.0, 0.17990665795209217105},
};

double rel_err(double got, double want) { return std::abs(got - want) / std::abs(want); }

}  // namespace

TEST(BesselK, HalfOrderClosedForm) {
  EXPECT_NEAR(bessel_k(0.5, 1.0), std::sqrt(std::numbers::pi / 2.0) * std::exp(-1.0), 1e-16);
  const double want = std::sqrt(std::numbers::pi / 4.0) * std::exp(-2.0) * 1.5;
  EXPECT_LT(rel_err(bessel_k(1.5, 2.0), want), 1e-15);
}

TEST(BesselK, OrderOneAtOne) { EXPECT_LT(rel_err(bessel_k(1.0, 1.0), 0.60190723019723457474), 1e-14); }

TEST(BesselK, MatchesHighPrecisionTable) {
  for (const Reference& r : kTable) {
    EXPECT_LT(rel_err(bessel_k(r.nu, r.z), r.value), 1e-13) << "nu=" << r.nu << " z=" << r.z;
  }
}

TEST(BesselK, MatchesMultiprecisionSweep) {
  using Big = boost::multiprecision::cpp_bin_float_50;
  double worst = 0.0;
  for (double nu = 0.25; nu <= 5.0 + 1e-12; nu += 0.35) {
    for (double z : {1e-6, 1e-3, 0.05, 0.4, 1.0, 1.9, 2.0, 2.1, 3.7, 8.0, 17.0, 33.0, 50.0}) {
      const double want = static_cast<double>(boost::math::cyl_bessel_k(Big(nu), Big(z)));
      worst = std::max(worst, rel_err(bessel_k(nu, z), want));
    }
  }
  EXPECT_LT(worst, 1e-13);
}

TEST(BesselK, SymmetricInOrder) {
  EXPECT_DOUBLE_EQ(bessel_k(-1.3, 2.5), bessel_k(1.3, 2.5));
}

TEST(BesselK, RecurrenceHolds) {
  // K_{nu+1}(z) = K_{nu-1}(z) + (2 nu / z) K_nu(z).
  for (double nu : {1.2, 2.5, 3.9}) {
    for (double z : {0.3, 2.0, 9.0}) {
      const double lhs = bessel_k(nu + 1.0, z);
      const double rhs = bessel_k(nu - 1.0, z) + 2.0 * nu / z * bessel_k(nu, z);
      EXPECT_LT(rel_err(lhs, rhs), 1e-13);
    }
  }
}

TEST(BesselK, RejectsNonPositiveArgument) {
  EXPECT_THROW(bessel_k(1.0, 0.0), gphodlr::DomainError);
  EXPECT_THROW(bessel_k(1.0, -2.0), gphodlr::DomainError);
  EXPECT_THROW(bessel_k(1.0, std::nan("")), gphodlr::DomainError);
}

TEST(BesselK, LowerPairSharesEvaluation) {
  for (double nu : {0.3, 0.5, 1.0, 2.7}) {
    const auto [lower, k] = gphodlr::bessel_k_lower_pair(nu, 1.7);
    EXPECT_LT(rel_err(lower, bessel_k(nu - 1.0, 1.7)), 1e-14);
    EXPECT_LT(rel_err(k, bessel_k(nu, 1.7)), 1e-14);
  }
}
