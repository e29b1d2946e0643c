#pragma once

#include <Eigen/Core>
#include <Eigen/QR>

#include <cstddef>
#include <vector>

#include "gphodlr/errors.hpp"
#include "gphodlr/hodlr.hpp"
#include "gphodlr/linalg.hpp"
#include "gphodlr/parallel.hpp"

namespace gphodlr {

/// Which half of W W^T an operation uses: W itself or W^T.
enum class Side { direct, transpose };

/// Symmetric factor W with W W^T = Sigma~ (tree order).
///
/// W = Wbar F_{tau-1} ... F_0, where Wbar = blockdiag(L_i) holds the leaf
/// Cholesky factors and each F_l is block diagonal over the nodes of depth l
/// with blocks I + Q (C - I) Q^T: Q = blockdiag(Q1, Q2) are orthonormal bases
/// of the whitened off-diagonal factors of the node's two children and
/// C C^T = [I, R1 R2^T; R2 R1^T, I] is a small dense Cholesky factor.
class SymmetricFactor {
 public:
  struct NodeUpdate {
    Eigen::MatrixXd q_left;   // m1 x k1
    Eigen::MatrixXd q_right;  // m2 x k2
    Eigen::MatrixXd core;     // (k1 + k2) lower triangular
  };

  std::size_t n() const noexcept { return levels_[0][0].size; }
  std::size_t level() const noexcept { return levels_.size() - 1; }
  double logdet() const noexcept { return logdet_; }
  /// Largest diagonal shift used by any leaf or node Cholesky.
  double max_jitter() const noexcept { return max_jitter_; }
  const std::vector<Eigen::MatrixXd>& leaf_factors() const noexcept { return leaf_lower_; }
  const std::vector<std::vector<NodeUpdate>>& updates() const noexcept { return updates_; }

  /// W X (Side::direct) or W^T X (Side::transpose).
  Eigen::MatrixXd apply(Side side, Eigen::MatrixXd x) const {
    check(x.rows());
    if (side == Side::direct) {
      for (std::size_t l = 0; l < level(); ++l) apply_level(l, Op::core, x);
      apply_leaves(Op::core, x);
    } else {
      apply_leaves(Op::core_t, x);
      for (std::size_t l = level(); l-- > 0;) apply_level(l, Op::core_t, x);
    }
    return x;
  }

  /// W^{-1} X (Side::direct) or W^{-T} X (Side::transpose).
  Eigen::MatrixXd solve(Side side, Eigen::MatrixXd x) const {
    check(x.rows());
    if (side == Side::direct) {
      apply_leaves(Op::inverse, x);
      for (std::size_t l = level(); l-- > 0;) apply_level(l, Op::inverse, x);
    } else {
      for (std::size_t l = 0; l < level(); ++l) apply_level(l, Op::inverse_t, x);
      apply_leaves(Op::inverse_t, x);
    }
    return x;
  }

 private:
  friend SymmetricFactor symmetric_factorize(const HodlrMatrix&);

  enum class Op { core, core_t, inverse, inverse_t };

  void check(Eigen::Index rows) const {
    if (static_cast<std::size_t>(rows) != n()) {
      throw DimensionMismatch("symmetric factor", n(), static_cast<std::size_t>(rows));
    }
  }

  void apply_leaves(Op op, Eigen::MatrixXd& x) const {
    const auto& ranges = levels_.back();
    parallel_for(ranges.size(), [&](std::size_t i) {
      auto block = x.middleRows(ranges[i].first(), ranges[i].rows());
      const auto lower = leaf_lower_[i].triangularView<Eigen::Lower>();
      switch (op) {
        case Op::core:
          block = (lower * block).eval();
          break;
        case Op::core_t:
          block = (lower.transpose() * block).eval();
          break;
        case Op::inverse:
          lower.solveInPlace(block);
          break;
        case Op::inverse_t:
          lower.transpose().solveInPlace(block);
          break;
      }
    });
  }

  // x_node += Q (op(C) z - z) with z = Q^T x_node.
  void apply_level(std::size_t l, Op op, Eigen::MatrixXd& x) const {
    const auto& children = levels_[l + 1];
    parallel_for(updates_[l].size(), [&](std::size_t i) {
      const NodeUpdate& u = updates_[l][i];
      const IndexRange a = children[2 * i];
      const IndexRange b = children[2 * i + 1];
      const Eigen::Index k1 = u.q_left.cols();
      const Eigen::Index k2 = u.q_right.cols();
      auto xa = x.middleRows(a.first(), a.rows());
      auto xb = x.middleRows(b.first(), b.rows());
      Eigen::MatrixXd z(k1 + k2, x.cols());
      z.topRows(k1).noalias() = u.q_left.transpose() * xa;
      z.bottomRows(k2).noalias() = u.q_right.transpose() * xb;
      Eigen::MatrixXd t = z;
      const auto lower = u.core.triangularView<Eigen::Lower>();
      switch (op) {
        case Op::core:
          t = lower * z;
          break;
        case Op::core_t:
          t = lower.transpose() * z;
          break;
        case Op::inverse:
          lower.solveInPlace(t);
          break;
        case Op::inverse_t:
          lower.transpose().solveInPlace(t);
          break;
      }
      t -= z;
      xa.noalias() += u.q_left * t.topRows(k1);
      xb.noalias() += u.q_right * t.bottomRows(k2);
    });
  }

  std::vector<std::vector<IndexRange>> levels_;
  std::vector<Eigen::MatrixXd> leaf_lower_;
  std::vector<std::vector<NodeUpdate>> updates_;
  double logdet_ = 0.0;
  double max_jitter_ = 0.0;
};

namespace detail {

struct ThinQr {
  Eigen::MatrixXd q;  // m x k
  Eigen::MatrixXd r;  // k x p
};

inline ThinQr thin_qr(const Eigen::MatrixXd& a) {
  const Eigen::Index k = std::min(a.rows(), a.cols());
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  ThinQr out;
  out.q = qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), k);
  out.r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  return out;
}

}  // namespace detail

/// Factors the HODLR matrix bottom-up in O(n p^2 tau + n m^2) work (m = leaf
/// size). A failing leaf Cholesky reports the leaf index; a failing node core
/// reports leaf_count + (2^l - 1 + i) for node i at depth l.
inline SymmetricFactor symmetric_factorize(const HodlrMatrix& h) {
  SymmetricFactor w;
  w.levels_ = h.layout().levels();
  const std::size_t tau = h.level();
  const auto& leaf_ranges = w.levels_.back();

  // Whitened factor Gc = Wbar^{-1} G, progressively updated as F_l^{-1} Gc.
  Eigen::MatrixXd gc = h.nystrom_factor();
  w.leaf_lower_.resize(leaf_ranges.size());
  std::vector<double> jitters(leaf_ranges.size(), 0.0);
  parallel_for(leaf_ranges.size(), [&](std::size_t i) {
    CholeskyFactor f = jittered_cholesky(h.leaves()[i], "HODLR leaf block", static_cast<long>(i));
    jitters[i] = f.jitter;
    const IndexRange r = leaf_ranges[i];
    if (tau > 0) {
      f.lower.triangularView<Eigen::Lower>().solveInPlace(gc.middleRows(r.first(), r.rows()));
    }
    w.leaf_lower_[i] = std::move(f.lower);
  });
  double logdet = 0.0;
  for (std::size_t i = 0; i < leaf_ranges.size(); ++i) {
    logdet += cholesky_logdet(w.leaf_lower_[i]);
    w.max_jitter_ = std::max(w.max_jitter_, jitters[i]);
  }

  w.updates_.resize(tau);
  for (std::size_t l = tau; l-- > 0;) {
    const auto& children = w.levels_[l + 1];
    const std::size_t count = w.levels_[l].size();
    w.updates_[l].resize(count);
    std::vector<double> node_jitter(count, 0.0);
    std::vector<double> node_logdet(count, 0.0);
    parallel_for(count, [&](std::size_t i) {
      const IndexRange a = children[2 * i];
      const IndexRange b = children[2 * i + 1];
      detail::ThinQr qa = detail::thin_qr(gc.middleRows(a.first(), a.rows()));
      detail::ThinQr qb = detail::thin_qr(gc.middleRows(b.first(), b.rows()));
      const Eigen::Index k1 = qa.r.rows();
      const Eigen::Index k2 = qb.r.rows();
      Eigen::MatrixXd t = Eigen::MatrixXd::Identity(k1 + k2, k1 + k2);
      t.topRightCorner(k1, k2).noalias() = qa.r * qb.r.transpose();
      t.bottomLeftCorner(k2, k1) = t.topRightCorner(k1, k2).transpose();
      const long tag = static_cast<long>(leaf_ranges.size() + (std::size_t{1} << l) - 1 + i);
      CholeskyFactor c = jittered_cholesky(t, "HODLR node core", tag);
      node_jitter[i] = c.jitter;
      node_logdet[i] = cholesky_logdet(c.lower);

      // Gc[node] = Q C^{-1} [R1; R2].
      Eigen::MatrixXd stacked(k1 + k2, qa.r.cols());
      stacked.topRows(k1) = qa.r;
      stacked.bottomRows(k2) = qb.r;
      c.lower.triangularView<Eigen::Lower>().solveInPlace(stacked);
      gc.middleRows(a.first(), a.rows()).noalias() = qa.q * stacked.topRows(k1);
      gc.middleRows(b.first(), b.rows()).noalias() = qb.q * stacked.bottomRows(k2);

      w.updates_[l][i] = {std::move(qa.q), std::move(qb.q), std::move(c.lower)};
    });
    for (std::size_t i = 0; i < count; ++i) {
      logdet += node_logdet[i];
      w.max_jitter_ = std::max(w.max_jitter_, node_jitter[i]);
    }
  }
  w.logdet_ = logdet;
  return w;
}

/// W v or W^T v.
inline Eigen::VectorXd apply_w(const SymmetricFactor& w, Side side, const Eigen::VectorXd& v) {
  return w.apply(side, v);
}

/// W^{-1} v (direct) or W^{-T} v (transpose).
inline Eigen::VectorXd factor_solve(const SymmetricFactor& w, Side side, const Eigen::VectorXd& v) {
  return w.solve(side, v);
}

/// Sigma~^{-1} v = W^{-T} W^{-1} v.
inline Eigen::VectorXd solve(const SymmetricFactor& w, const Eigen::VectorXd& v) {
  return w.solve(Side::transpose, w.solve(Side::direct, v));
}

inline Eigen::MatrixXd solve(const SymmetricFactor& w, const Eigen::MatrixXd& x) {
  return w.solve(Side::transpose, w.solve(Side::direct, x));
}

inline double logdet(const SymmetricFactor& w) { return w.logdet(); }

}  // namespace gphodlr
