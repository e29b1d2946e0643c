#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <string>

#include "gphodlr/errors.hpp"

namespace gphodlr {

/// Lower Cholesky factor plus the diagonal shift that was needed to obtain it.
struct CholeskyFactor {
  Eigen::MatrixXd lower;
  double jitter = 0.0;
};

/// Cholesky factorization with the library-wide jitter policy: on failure add
/// 1e-12 x (mean diagonal) to the diagonal, escalate x10, at most three
/// attempts, then throw NotPositiveDefinite tagged with `block`.
inline CholeskyFactor jittered_cholesky(const Eigen::MatrixXd& a, const std::string& what,
                                        long block = -1) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success && llt.matrixLLT().diagonal().allFinite()) {
    return {llt.matrixL(), 0.0};
  }
  const double mean_diag = a.diagonal().mean();
  if (!(std::isfinite(mean_diag) && mean_diag > 0.0)) {
    throw NotPositiveDefinite(what + ": non-positive mean diagonal", block);
  }
  double jitter = 1e-12 * mean_diag;
  for (int attempt = 0; attempt < 3; ++attempt, jitter *= 10.0) {
    Eigen::MatrixXd shifted = a;
    shifted.diagonal().array() += jitter;
    llt.compute(shifted);
    if (llt.info() == Eigen::Success && llt.matrixLLT().diagonal().allFinite()) {
      return {llt.matrixL(), jitter};
    }
  }
  throw NotPositiveDefinite(what + ": Cholesky failed after jitter escalation", block);
}

/// log|A| from a lower Cholesky factor of A.
inline double cholesky_logdet(const Eigen::MatrixXd& lower) {
  return 2.0 * lower.diagonal().array().log().sum();
}

namespace detail {

// Inverts a lower-triangular matrix in place by 2x2 block recursion
// (n^3/3 flops). The strictly upper part is zeroed.
inline void invert_lower_in_place(Eigen::Ref<Eigen::MatrixXd> l) {
  const Eigen::Index n = l.rows();
  if (n <= 96) {
    Eigen::MatrixXd inv = Eigen::MatrixXd::Identity(n, n);
    l.triangularView<Eigen::Lower>().solveInPlace(inv);
    l = inv.triangularView<Eigen::Lower>();
    return;
  }
  const Eigen::Index n1 = n / 2;
  const Eigen::Index n2 = n - n1;
  invert_lower_in_place(l.topLeftCorner(n1, n1));
  invert_lower_in_place(l.bottomRightCorner(n2, n2));
  // [A 0; C D]^{-1} has lower-left block -D^{-1} C A^{-1}.
  const Eigen::MatrixXd ca = l.bottomLeftCorner(n2, n1) * l.topLeftCorner(n1, n1).triangularView<Eigen::Lower>();
  l.bottomLeftCorner(n2, n1).noalias() = -(l.bottomRightCorner(n2, n2).triangularView<Eigen::Lower>() * ca);
  l.topRightCorner(n1, n2).setZero();
}

// Lower triangle of B^T B for lower-triangular B (n^3/3 flops).
inline void lower_gram(const Eigen::Ref<const Eigen::MatrixXd>& b, Eigen::Ref<Eigen::MatrixXd> s) {
  const Eigen::Index n = b.rows();
  if (n <= 96) {
    s.noalias() = b.triangularView<Eigen::Lower>().transpose() * b;
    return;
  }
  const Eigen::Index n1 = n / 2;
  const Eigen::Index n2 = n - n1;
  const auto b21 = b.bottomLeftCorner(n2, n1);
  lower_gram(b.topLeftCorner(n1, n1), s.topLeftCorner(n1, n1));
  s.topLeftCorner(n1, n1).selfadjointView<Eigen::Lower>().rankUpdate(b21.transpose());
  s.bottomLeftCorner(n2, n1).noalias() =
      b.bottomRightCorner(n2, n2).triangularView<Eigen::Lower>().transpose() * b21;
  lower_gram(b.bottomRightCorner(n2, n2), s.bottomRightCorner(n2, n2));
}

}  // namespace detail

/// A^{-1} from the lower Cholesky factor of A, via L^{-1} and L^{-T} L^{-1}.
/// Costs about 2n^3/3 flops against 2n^3 for two triangular solves.
inline Eigen::MatrixXd inverse_from_cholesky(const Eigen::MatrixXd& lower) {
  Eigen::MatrixXd b = lower;
  detail::invert_lower_in_place(b);
  Eigen::MatrixXd s(b.rows(), b.cols());
  detail::lower_gram(b, s);
  s.triangularView<Eigen::StrictlyUpper>() = s.transpose();
  return s;
}

}  // namespace gphodlr
