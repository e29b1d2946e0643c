#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gphodlr/errors.hpp"
#include "gphodlr/geometry.hpp"
#include "gphodlr/kernel.hpp"
#include "gphodlr/linalg.hpp"
#include "gphodlr/parallel.hpp"

namespace gphodlr {

inline constexpr std::size_t kDefaultRank = 72;
inline constexpr std::size_t kDefaultDenseCap = std::size_t{1} << 13;

/// max(0, floor(log2 n) - 8): leaves of 256 to 511 points.
inline std::size_t default_level(std::size_t n) {
  if (n == 0) return 0;
  const auto log2n = static_cast<std::size_t>(std::bit_width(n) - 1);
  return log2n > 8 ? log2n - 8 : 0;
}

struct HodlrOptions {
  std::size_t rank = kDefaultRank;
  std::optional<std::size_t> level;  // empty = default_level(n)
  bool clamp_rank = true;            // clamp rank to the smallest leaf size
};

/// Everything about the HODLR structure that does not depend on theta: the
/// tree ordering, the ordered points and the global landmark set. Built once
/// per point set and shared by every matrix assembled on it.
struct HodlrLayout {
  OrderingPlan plan;
  PointSet ordered;
  LandmarkSet landmarks;
  std::size_t rank = 0;
  std::size_t requested_rank = 0;
  std::vector<std::string> warnings;

  std::size_t n() const noexcept { return plan.size(); }
  std::size_t level() const noexcept { return plan.level(); }
  const std::vector<std::vector<IndexRange>>& levels() const noexcept { return plan.levels; }
  std::size_t num_leaves() const noexcept { return plan.leaf_ranges().size(); }

  std::size_t min_leaf_size() const {
    std::size_t smallest = n();
    for (const IndexRange& r : plan.leaf_ranges()) smallest = std::min(smallest, r.size);
    return smallest;
  }
};

inline std::shared_ptr<const HodlrLayout> make_layout(const PointSet& points,
                                                      const HodlrOptions& options = {}) {
  const std::size_t n = points.size();
  const std::size_t level = options.level.value_or(default_level(n));
  if (options.rank < 1) throw InvalidInput("rank must be >= 1");

  auto layout = std::make_shared<HodlrLayout>();
  layout->plan = kdtree_order(points, level);
  layout->ordered = points.permuted(layout->plan.permutation);
  layout->requested_rank = options.rank;
  std::size_t rank = std::min(options.rank, n);
  if (rank < options.rank) {
    layout->warnings.push_back("rank " + std::to_string(options.rank) + " clamped to n = " +
                               std::to_string(n));
  }
  if (options.clamp_rank && level > 0) {
    const std::size_t smallest = layout->min_leaf_size();
    if (rank > smallest) {
      layout->warnings.push_back("rank " + std::to_string(rank) +
                                 " clamped to smallest leaf size " + std::to_string(smallest));
      rank = smallest;
    }
  }
  layout->rank = rank;
  layout->landmarks = select_landmarks(n, rank);
  return layout;
}

namespace detail {

inline double column_distance(const Eigen::MatrixXd& c, Eigen::Index a, Eigen::Index b) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < c.rows(); ++k) {
    const double t = c(k, a) - c(k, b);
    s += t * t;
  }
  return std::sqrt(s);
}

// Symmetric kernel block on one contiguous range of the ordered points.
template <IsotropicKernel Kernel>
Eigen::MatrixXd kernel_leaf(const Kernel& kernel, const Eigen::VectorXd& theta,
                            const Eigen::MatrixXd& coords, IndexRange range) {
  const Eigen::Index m = range.rows();
  Eigen::MatrixXd out(m, m);
  for (Eigen::Index c = 0; c < m; ++c) {
    for (Eigen::Index r = 0; r <= c; ++r) {
      const double v =
          kernel.jet(column_distance(coords, range.first() + r, range.first() + c), theta, 0).value;
      out(r, c) = v;
      out(c, r) = v;
    }
  }
  return out;
}

// Sigma_{rows, P} for the rows of one range.
template <IsotropicKernel Kernel>
void kernel_cross_rows(const Kernel& kernel, const Eigen::VectorXd& theta,
                       const Eigen::MatrixXd& coords, const LandmarkSet& landmarks, IndexRange rows,
                       Eigen::MatrixXd& out) {
  for (std::size_t c = 0; c < landmarks.size(); ++c) {
    const auto lc = static_cast<Eigen::Index>(landmarks.indices[c]);
    for (Eigen::Index r = rows.first(); r < rows.first() + rows.rows(); ++r) {
      out(r, static_cast<Eigen::Index>(c)) =
          kernel.jet(column_distance(coords, r, lc), theta, 0).value;
    }
  }
}

// A symmetric matrix with dense leaves whose off-diagonal node blocks are
// F[I] C F[J]^T, where F = [F_0 ... F_{f-1}] stacks n x p factors and C is a
// symmetric (f p) x (f p) core (null = identity). Both the HODLR covariance
// and its derivatives have this shape.
struct TreeView {
  const std::vector<std::vector<IndexRange>>* levels = nullptr;
  const std::vector<Eigen::MatrixXd>* leaves = nullptr;
  std::vector<const Eigen::MatrixXd*> factors;
  const Eigen::MatrixXd* core = nullptr;

  std::size_t n() const { return (*levels)[0][0].size; }
  std::size_t level() const { return levels->size() - 1; }
  Eigen::Index width() const {
    Eigen::Index q = 0;
    for (const auto* f : factors) q += f->cols();
    return q;
  }

  // Stacked F[range]^T X[range].
  Eigen::MatrixXd project(IndexRange range, const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd out(width(), x.cols());
    Eigen::Index offset = 0;
    for (const auto* f : factors) {
      out.middleRows(offset, f->cols()).noalias() =
          f->middleRows(range.first(), range.rows()).transpose() *
          x.middleRows(range.first(), range.rows());
      offset += f->cols();
    }
    return out;
  }

  Eigen::MatrixXd expand(IndexRange range, const Eigen::MatrixXd& coef) const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(range.rows(), coef.cols());
    Eigen::Index offset = 0;
    for (const auto* f : factors) {
      out.noalias() += f->middleRows(range.first(), range.rows()) * coef.middleRows(offset, f->cols());
      offset += f->cols();
    }
    return out;
  }

  Eigen::MatrixXd apply_core(const Eigen::MatrixXd& v) const {
    if (core == nullptr) return v;
    return *core * v;
  }

  // Y = A X in O(n q r): leaf projections are summed up the tree, sibling
  // projections pushed back down, and each leaf expands its accumulated
  // coefficient once.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    const std::size_t tau = level();
    const auto& leaf_ranges = (*levels)[tau];
    Eigen::MatrixXd y(x.rows(), x.cols());
    parallel_for(leaf_ranges.size(), [&](std::size_t i) {
      const IndexRange r = leaf_ranges[i];
      y.middleRows(r.first(), r.rows()).noalias() =
          (*leaves)[i] * x.middleRows(r.first(), r.rows());
    });
    if (tau == 0) return y;

    std::vector<std::vector<Eigen::MatrixXd>> proj(tau + 1);
    proj[tau].resize(leaf_ranges.size());
    parallel_for(leaf_ranges.size(),
                 [&](std::size_t i) { proj[tau][i] = project(leaf_ranges[i], x); });
    for (std::size_t l = tau - 1; l >= 1; --l) {
      proj[l].resize((*levels)[l].size());
      for (std::size_t i = 0; i < proj[l].size(); ++i) {
        proj[l][i] = proj[l + 1][2 * i] + proj[l + 1][2 * i + 1];
      }
    }
    std::vector<Eigen::MatrixXd> coef(2);
    coef[0] = apply_core(proj[1][1]);
    coef[1] = apply_core(proj[1][0]);
    for (std::size_t l = 2; l <= tau; ++l) {
      std::vector<Eigen::MatrixXd> next(proj[l].size());
      for (std::size_t c = 0; c < next.size(); ++c) {
        next[c] = coef[c / 2] + apply_core(proj[l][c ^ 1]);
      }
      coef = std::move(next);
    }
    parallel_for(leaf_ranges.size(), [&](std::size_t i) {
      const IndexRange r = leaf_ranges[i];
      y.middleRows(r.first(), r.rows()) += expand(r, coef[i]);
    });
    return y;
  }

  Eigen::MatrixXd block(IndexRange rows, IndexRange cols) const {
    Eigen::MatrixXd left(rows.rows(), width());
    Eigen::MatrixXd right(cols.rows(), width());
    Eigen::Index offset = 0;
    for (const auto* f : factors) {
      left.middleCols(offset, f->cols()) = f->middleRows(rows.first(), rows.rows());
      right.middleCols(offset, f->cols()) = f->middleRows(cols.first(), cols.rows());
      offset += f->cols();
    }
    if (core == nullptr) return left * right.transpose();
    return left * (*core) * right.transpose();
  }

  Eigen::MatrixXd dense() const {
    const std::size_t tau = level();
    const auto nn = static_cast<Eigen::Index>(n());
    Eigen::MatrixXd out(nn, nn);
    for (std::size_t l = 0; l < tau; ++l) {
      const auto& children = (*levels)[l + 1];
      for (std::size_t i = 0; i < (*levels)[l].size(); ++i) {
        const IndexRange a = children[2 * i];
        const IndexRange b = children[2 * i + 1];
        const Eigen::MatrixXd blk = block(a, b);
        out.block(a.first(), b.first(), a.rows(), b.rows()) = blk;
        out.block(b.first(), a.first(), b.rows(), a.rows()) = blk.transpose();
      }
    }
    const auto& leaf_ranges = (*levels)[tau];
    for (std::size_t i = 0; i < leaf_ranges.size(); ++i) {
      const IndexRange r = leaf_ranges[i];
      out.block(r.first(), r.first(), r.rows(), r.rows()) = (*leaves)[i];
    }
    return out;
  }
};

}  // namespace detail

/// HODLR approximation of the covariance matrix, in tree order.
///
/// Leaves are exact kernel blocks. The off-diagonal block of every node is the
/// Nystrom block Sigma_{I,P} Sigma_{P,P}^{-1} Sigma_{P,J} on the global
/// landmark set P, stored once as G[I] G[J]^T with G = Sigma_{:,P} L_P^{-T}
/// and L_P the Cholesky factor of Sigma_{P,P}. All vectors passed to this
/// class are in tree order (see OrderingPlan::to_tree_order).
class HodlrMatrix {
 public:
  HodlrMatrix(const CovarianceModel& model, const Eigen::VectorXd& theta,
              std::shared_ptr<const HodlrLayout> layout)
      : layout_(std::move(layout)), model_(model), theta_(theta) {
    if (!layout_) throw InvalidInput("HodlrMatrix needs a layout");
    (void)model_.jet(0.0, theta_, 0);  // validates theta
    const Eigen::MatrixXd& coords = layout_->ordered.coords();
    const auto& leaf_ranges = layout_->plan.leaf_ranges();

    leaves_.resize(leaf_ranges.size());
    parallel_for(leaf_ranges.size(), [&](std::size_t i) {
      leaves_[i] = detail::kernel_leaf(model_, theta_, coords, leaf_ranges[i]);
    });

    const auto n = static_cast<Eigen::Index>(layout_->n());
    const auto p = static_cast<Eigen::Index>(layout_->rank);
    Eigen::MatrixXd cross(n, p);
    parallel_for(leaf_ranges.size(), [&](std::size_t i) {
      detail::kernel_cross_rows(model_, theta_, coords, layout_->landmarks, leaf_ranges[i], cross);
    });
    Eigen::MatrixXd core(p, p);
    for (Eigen::Index c = 0; c < p; ++c) {
      core.row(c) = cross.row(static_cast<Eigen::Index>(layout_->landmarks.indices[c]));
    }
    landmark_factor_ = jittered_cholesky(core, "landmark core matrix Sigma_PP");
    // G = cross L^{-T}, i.e. solve G L^T = cross.
    landmark_factor_.lower.transpose().triangularView<Eigen::Upper>().solveInPlace<Eigen::OnTheRight>(
        cross);
    factor_ = std::move(cross);
  }

  std::size_t n() const noexcept { return layout_->n(); }
  std::size_t level() const noexcept { return layout_->level(); }
  std::size_t rank() const noexcept { return layout_->rank; }
  const HodlrLayout& layout() const noexcept { return *layout_; }
  const std::shared_ptr<const HodlrLayout>& layout_ptr() const noexcept { return layout_; }
  const CovarianceModel& model() const noexcept { return model_; }
  const Eigen::VectorXd& theta() const noexcept { return theta_; }

  const std::vector<Eigen::MatrixXd>& leaves() const noexcept { return leaves_; }
  /// G = Sigma_{:,P} L_P^{-T}, n x p.
  const Eigen::MatrixXd& nystrom_factor() const noexcept { return factor_; }
  const CholeskyFactor& landmark_factor() const noexcept { return landmark_factor_; }

  /// Children (I, J) of internal node `node` at depth `level` < tau.
  std::pair<IndexRange, IndexRange> children(std::size_t level, std::size_t node) const {
    if (level >= this->level() || node >= layout_->levels()[level].size()) {
      throw InvalidInput("no internal node " + std::to_string(node) + " at level " +
                         std::to_string(level));
    }
    const auto& next = layout_->levels()[level + 1];
    return {next[2 * node], next[2 * node + 1]};
  }

  /// U factor of the (I, J) block of a node: the block equals U V^T.
  auto offdiag_u(std::size_t level, std::size_t node) const {
    const IndexRange r = children(level, node).first;
    return factor_.middleRows(r.first(), r.rows());
  }
  auto offdiag_v(std::size_t level, std::size_t node) const {
    const IndexRange r = children(level, node).second;
    return factor_.middleRows(r.first(), r.rows());
  }

  detail::TreeView view() const {
    detail::TreeView v;
    v.levels = &layout_->levels();
    v.leaves = &leaves_;
    v.factors = {&factor_};
    return v;
  }

 private:
  std::shared_ptr<const HodlrLayout> layout_;
  CovarianceModel model_;
  Eigen::VectorXd theta_;
  std::vector<Eigen::MatrixXd> leaves_;
  CholeskyFactor landmark_factor_;
  Eigen::MatrixXd factor_;
};

inline HodlrMatrix assemble(const CovarianceModel& model, const Eigen::VectorXd& theta,
                            std::shared_ptr<const HodlrLayout> layout) {
  return HodlrMatrix(model, theta, std::move(layout));
}

inline HodlrMatrix assemble(const CovarianceModel& model, const Eigen::VectorXd& theta,
                            const PointSet& points, const HodlrOptions& options = {}) {
  return HodlrMatrix(model, theta, make_layout(points, options));
}

namespace detail {
inline void check_rows(const char* what, std::size_t n, Eigen::Index rows) {
  if (static_cast<std::size_t>(rows) != n) {
    throw DimensionMismatch(what, n, static_cast<std::size_t>(rows));
  }
}
}  // namespace detail

/// H X for a block of tree-ordered vectors.
inline Eigen::MatrixXd apply(const HodlrMatrix& h, const Eigen::MatrixXd& x) {
  detail::check_rows("HODLR matvec", h.n(), x.rows());
  return h.view().apply(x);
}

inline Eigen::VectorXd matvec(const HodlrMatrix& h, const Eigen::VectorXd& v) {
  detail::check_rows("HODLR matvec", h.n(), v.size());
  return h.view().apply(v);
}

/// Materializes the approximation (tree order). Test bridge only.
inline Eigen::MatrixXd to_dense(const HodlrMatrix& h, std::size_t cap = kDefaultDenseCap) {
  if (h.n() > cap) throw CapExceeded("HODLR to_dense", h.n(), cap);
  return h.view().dense();
}

}  // namespace gphodlr
