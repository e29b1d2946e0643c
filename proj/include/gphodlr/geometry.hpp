#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "gphodlr/errors.hpp"

namespace gphodlr {

/// n points in R^d, stored one point per column (d x n).
class PointSet {
 public:
  PointSet() = default;

  explicit PointSet(Eigen::MatrixXd coords) : coords_(std::move(coords)) {
    if (coords_.cols() < 1) throw InvalidInput("a point set needs at least one point");
    if (coords_.rows() < 1) throw InvalidInput("points must have dimension >= 1");
    if (!coords_.allFinite()) throw InvalidInput("point coordinates must be finite");
  }

  std::size_t size() const noexcept { return static_cast<std::size_t>(coords_.cols()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(coords_.rows()); }
  const Eigen::MatrixXd& coords() const noexcept { return coords_; }
  auto point(std::size_t i) const { return coords_.col(static_cast<Eigen::Index>(i)); }

  double distance(std::size_t i, std::size_t j) const {
    return (coords_.col(static_cast<Eigen::Index>(i)) - coords_.col(static_cast<Eigen::Index>(j)))
        .norm();
  }

  /// The points reordered so that result.point(k) == point(order[k]).
  PointSet permuted(const std::vector<std::size_t>& order) const {
    Eigen::MatrixXd out(coords_.rows(), static_cast<Eigen::Index>(order.size()));
    for (std::size_t k = 0; k < order.size(); ++k) {
      out.col(static_cast<Eigen::Index>(k)) = coords_.col(static_cast<Eigen::Index>(order[k]));
    }
    return PointSet(std::move(out));
  }

 private:
  Eigen::MatrixXd coords_;
};

/// Contiguous half-open index range [begin, begin + size).
struct IndexRange {
  std::size_t begin = 0;
  std::size_t size = 0;

  std::size_t end() const noexcept { return begin + size; }
  Eigen::Index first() const noexcept { return static_cast<Eigen::Index>(begin); }
  Eigen::Index rows() const noexcept { return static_cast<Eigen::Index>(size); }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

/// Result of K-D ordering: the permutation plus the dyadic block tree over the
/// ordered index space.
///
/// `permutation[k]` is the original index of the k-th ordered point.
/// `levels[l]` holds the 2^l node ranges at depth l; node i at depth l has
/// children 2i and 2i+1 at depth l+1. Each node splits into a left part of
/// ceil(m/2) and a right part of floor(m/2).
struct OrderingPlan {
  std::vector<std::size_t> permutation;
  std::vector<std::vector<IndexRange>> levels;

  std::size_t size() const noexcept { return permutation.size(); }
  std::size_t level() const noexcept { return levels.size() - 1; }
  const std::vector<IndexRange>& leaf_ranges() const { return levels.back(); }

  std::vector<std::size_t> inverse_permutation() const {
    std::vector<std::size_t> inverse(permutation.size());
    for (std::size_t k = 0; k < permutation.size(); ++k) inverse[permutation[k]] = k;
    return inverse;
  }

  /// Original-order vector -> tree-order vector.
  Eigen::VectorXd to_tree_order(const Eigen::VectorXd& v) const {
    check(v);
    Eigen::VectorXd out(v.size());
    for (std::size_t k = 0; k < permutation.size(); ++k) {
      out(static_cast<Eigen::Index>(k)) = v(static_cast<Eigen::Index>(permutation[k]));
    }
    return out;
  }

  /// Tree-order vector -> original-order vector.
  Eigen::VectorXd to_original_order(const Eigen::VectorXd& v) const {
    check(v);
    Eigen::VectorXd out(v.size());
    for (std::size_t k = 0; k < permutation.size(); ++k) {
      out(static_cast<Eigen::Index>(permutation[k])) = v(static_cast<Eigen::Index>(k));
    }
    return out;
  }

 private:
  void check(const Eigen::VectorXd& v) const {
    if (static_cast<std::size_t>(v.size()) != permutation.size()) {
      throw DimensionMismatch("OrderingPlan vector", permutation.size(),
                              static_cast<std::size_t>(v.size()));
    }
  }
};

/// Dyadic ranges for `n` indices split `level` times (ceil/floor halves).
inline std::vector<std::vector<IndexRange>> dyadic_ranges(std::size_t n, std::size_t level) {
  std::vector<std::vector<IndexRange>> levels(level + 1);
  levels[0].push_back({0, n});
  for (std::size_t l = 0; l < level; ++l) {
    levels[l + 1].reserve(levels[l].size() * 2);
    for (const IndexRange& node : levels[l]) {
      const std::size_t left = (node.size + 1) / 2;
      levels[l + 1].push_back({node.begin, left});
      levels[l + 1].push_back({node.begin + left, node.size - left});
    }
  }
  return levels;
}

namespace detail {

inline Eigen::Index widest_axis(const PointSet& points, const std::size_t* first,
                                const std::size_t* last) {
  const auto d = static_cast<Eigen::Index>(points.dim());
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(d, std::numeric_limits<double>::infinity());
  Eigen::VectorXd hi = -lo;
  for (const std::size_t* it = first; it != last; ++it) {
    lo = lo.cwiseMin(points.point(*it));
    hi = hi.cwiseMax(points.point(*it));
  }
  Eigen::Index axis = 0;
  (hi - lo).maxCoeff(&axis);  // first maximal axis on ties
  return axis;
}

// Total order: coordinate along `axis`, then original index.
struct AxisLess {
  const PointSet* points;
  Eigen::Index axis;
  bool operator()(std::size_t a, std::size_t b) const {
    const double ca = points->coords()(axis, static_cast<Eigen::Index>(a));
    const double cb = points->coords()(axis, static_cast<Eigen::Index>(b));
    return ca < cb || (ca == cb && a < b);
  }
};

inline void kd_split(const PointSet& points, std::size_t* first, std::size_t* last,
                     std::size_t depth_left) {
  const auto m = static_cast<std::size_t>(last - first);
  if (m == 0) return;
  const AxisLess less{&points, widest_axis(points, first, last)};
  if (depth_left == 0) {
    std::sort(first, last, less);
    return;
  }
  std::size_t* mid = first + (m + 1) / 2;
  std::nth_element(first, mid, last, less);
  kd_split(points, first, mid, depth_left - 1);
  kd_split(points, mid, last, depth_left - 1);
}

}  // namespace detail

/// K-D tree ordering: recursive median split along the axis of widest spread,
/// lower ceil(m/2) points to the left; leaves are sorted along their own widest
/// axis. Deterministic for fixed input.
inline OrderingPlan kdtree_order(const PointSet& points, std::size_t level) {
  const std::size_t n = points.size();
  if (level >= 63 || (std::size_t{1} << level) > n) {
    throw LevelTooDeep("level " + std::to_string(level) + " needs 2^level <= n = " +
                       std::to_string(n));
  }
  OrderingPlan plan;
  plan.permutation.resize(n);
  std::iota(plan.permutation.begin(), plan.permutation.end(), std::size_t{0});
  detail::kd_split(points, plan.permutation.data(), plan.permutation.data() + n, level);
  plan.levels = dyadic_ranges(n, level);
  return plan;
}

/// Landmark (Nystrom core) points: p indices into the tree-ordered point set.
struct LandmarkSet {
  std::vector<std::size_t> indices;
  std::size_t size() const noexcept { return indices.size(); }
};

/// Even-stride subsample of the tree order: the i-th landmark (1-based) is the
/// ordered point ceil((i - 1/2) n / p) (1-based). Tree order is
/// locality-preserving, so the landmarks are spread over the domain.
inline LandmarkSet select_landmarks(std::size_t n, std::size_t p) {
  if (p < 1) throw InvalidInput("landmark count must be >= 1");
  if (p > n) {
    throw InvalidInput("landmark count " + std::to_string(p) + " exceeds n = " + std::to_string(n));
  }
  LandmarkSet set;
  set.indices.reserve(p);
  for (std::size_t i = 1; i <= p; ++i) {
    // ceil((2i - 1) n / 2p), converted to 0-based.
    const std::size_t one_based = ((2 * i - 1) * n + 2 * p - 1) / (2 * p);
    set.indices.push_back(one_based - 1);
  }
  return set;
}

inline LandmarkSet select_landmarks(const OrderingPlan& plan, std::size_t p) {
  return select_landmarks(plan.size(), p);
}

}  // namespace gphodlr
