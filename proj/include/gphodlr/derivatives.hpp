#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gphodlr/errors.hpp"
#include "gphodlr/hodlr.hpp"
#include "gphodlr/parallel.hpp"

namespace gphodlr {

/// One U S V^T summand of an off-diagonal derivative block: U and V are rows
/// of the factors `u` and `v` of the owning DerivativeHodlr. The same term
/// list applies to every node because the landmark set is global.
struct OffdiagTerm {
  std::size_t u;
  Eigen::MatrixXd s;
  std::size_t v;
};

/// Exact parameter derivative of a HodlrMatrix, on the same tree.
///
/// Leaves hold elementwise kernel partials. With the whitened quantities
/// G_j = Sigma_{j,(:,P)} L_P^{-T} and S_j = L_P^{-1} Sigma_{j,(P,P)} L_P^{-T},
/// the first derivative of a Nystrom block G[I] G[J]^T is
///   G_j[I] G[J]^T - G[I] S_j G[J]^T + G[I] G_j[J]^T,
/// and the second derivative is its eleven-term product-rule expansion.
class DerivativeHodlr {
 public:
  DerivativeHodlr() = default;

  std::size_t n() const noexcept { return layout_->n(); }
  std::size_t level() const noexcept { return layout_->level(); }
  const HodlrLayout& layout() const noexcept { return *layout_; }
  /// 1 for a first derivative, 2 for a second derivative.
  int order() const noexcept { return static_cast<int>(params_.size()); }
  const std::vector<std::size_t>& params() const noexcept { return params_; }

  const std::vector<Eigen::MatrixXd>& leaves() const noexcept { return leaves_; }
  const std::vector<std::shared_ptr<const Eigen::MatrixXd>>& factors() const noexcept {
    return factors_;
  }
  const std::vector<OffdiagTerm>& terms() const noexcept { return terms_; }
  std::size_t term_count() const noexcept { return terms_.size(); }

  /// Off-diagonal block (I, J) of internal node `node` at depth `level`.
  Eigen::MatrixXd offdiag_block(std::size_t level, std::size_t node) const {
    const auto& next = layout_->levels().at(level + 1);
    return view().block(next.at(2 * node), next.at(2 * node + 1));
  }

  detail::TreeView view() const {
    detail::TreeView v;
    v.levels = &layout_->levels();
    v.leaves = &leaves_;
    for (const auto& f : factors_) v.factors.push_back(f.get());
    v.core = &core_;
    return v;
  }

 private:
  friend class DerivativeBuilder;

  void finalize() {
    const Eigen::Index p = static_cast<Eigen::Index>(layout_->rank);
    const auto f = static_cast<Eigen::Index>(factors_.size());
    core_ = Eigen::MatrixXd::Zero(f * p, f * p);
    for (const OffdiagTerm& t : terms_) {
      core_.block(static_cast<Eigen::Index>(t.u) * p, static_cast<Eigen::Index>(t.v) * p, p, p) += t.s;
    }
    // The term list is closed under transposition, so the core is symmetric
    // up to rounding in the small products; make it exact.
    core_ = (0.5 * (core_ + core_.transpose())).eval();
  }

  std::shared_ptr<const HodlrLayout> layout_;
  std::vector<std::size_t> params_;
  std::vector<Eigen::MatrixXd> leaves_;
  std::vector<std::shared_ptr<const Eigen::MatrixXd>> factors_;
  std::vector<OffdiagTerm> terms_;
  Eigen::MatrixXd core_;
};

/// First derivatives for every estimable parameter and, optionally, all
/// second derivatives (stored once for j <= k).
struct DerivativeSet {
  std::vector<DerivativeHodlr> first;
  std::vector<DerivativeHodlr> second;  // packed upper triangle, row major
  std::size_t num_params = 0;

  bool has_second() const noexcept { return !second.empty(); }

  const DerivativeHodlr& hessian_term(std::size_t j, std::size_t k) const {
    if (j > k) std::swap(j, k);
    if (k >= num_params) throw UnsupportedParameter("parameter index out of range");
    if (!has_second()) throw InvalidInput("second derivatives were not built");
    return second[j * num_params - j * (j - 1) / 2 + (k - j)];
  }
};

/// Computes the shared whitened quantities once and emits derivative
/// matrices. Every kernel jet over the leaves and the landmark columns is
/// evaluated a single time at the highest requested order.
class DerivativeBuilder {
 public:
  /// `first` lists the first-derivative indices; `second` the (j, k) pairs.
  DerivativeBuilder(const HodlrMatrix& parent, std::vector<std::size_t> first,
                    std::vector<std::pair<std::size_t, std::size_t>> second)
      : parent_(parent), first_(std::move(first)), second_(std::move(second)) {
    const std::size_t m = parent.model().num_params();
    for (std::size_t j : first_) check_index(j, m);
    for (auto& [j, k] : second_) {
      check_index(j, m);
      check_index(k, m);
      if (j > k) std::swap(j, k);
    }
    compute();
  }

  const DerivativeHodlr& first(std::size_t i) const { return first_out_.at(i); }
  const DerivativeHodlr& second(std::size_t i) const { return second_out_.at(i); }
  std::vector<DerivativeHodlr> take_first() { return std::move(first_out_); }
  std::vector<DerivativeHodlr> take_second() { return std::move(second_out_); }

 private:
  static void check_index(std::size_t j, std::size_t m) {
    if (j >= m) {
      throw UnsupportedParameter("parameter index " + std::to_string(j) +
                                 " is not estimable (nu is fixed)");
    }
  }

  void compute() {
    const HodlrLayout& layout = parent_.layout();
    const auto layout_ptr = parent_.layout_ptr();
    const Eigen::MatrixXd& coords = layout.ordered.coords();
    const auto& leaf_ranges = layout.plan.leaf_ranges();
    const CovarianceModel& model = parent_.model();
    const Eigen::VectorXd& theta = parent_.theta();
    const auto n = static_cast<Eigen::Index>(layout.n());
    const auto p = static_cast<Eigen::Index>(layout.rank);
    const int order = second_.empty() ? 1 : 2;

    // Distinct first-derivative indices needed by any output.
    std::vector<std::size_t> js = first_;
    for (auto [j, k] : second_) {
      js.push_back(j);
      js.push_back(k);
    }
    std::sort(js.begin(), js.end());
    js.erase(std::unique(js.begin(), js.end()), js.end());
    std::vector<std::pair<std::size_t, std::size_t>> jks = second_;
    std::sort(jks.begin(), jks.end());
    jks.erase(std::unique(jks.begin(), jks.end()), jks.end());

    // Landmark columns of the kernel partials: B_j = Sigma_{j,(:,P)}.
    std::map<std::size_t, Eigen::MatrixXd> cross_j;
    std::map<std::pair<std::size_t, std::size_t>, Eigen::MatrixXd> cross_jk;
    for (std::size_t j : js) cross_j[j].resize(n, p);
    for (auto jk : jks) cross_jk[jk].resize(n, p);
    parallel_for(leaf_ranges.size(), [&](std::size_t i) {
      const IndexRange rows = leaf_ranges[i];
      for (Eigen::Index c = 0; c < p; ++c) {
        const auto lc = static_cast<Eigen::Index>(layout.landmarks.indices[static_cast<std::size_t>(c)]);
        for (Eigen::Index r = rows.first(); r < rows.first() + rows.rows(); ++r) {
          const KernelJet jet = model.jet(detail::column_distance(coords, r, lc), theta, order);
          for (auto& [j, m] : cross_j) m(r, c) = jet.grad[j];
          for (auto& [jk, m] : cross_jk) m(r, c) = jet.hess[jk.first][jk.second];
        }
      }
    });

    // Whitening with the parent's landmark Cholesky factor.
    const auto lower = parent_.landmark_factor().lower.triangularView<Eigen::Lower>();
    const auto whiten_rows = [&](Eigen::MatrixXd b) {
      // b L^{-T}
      parent_.landmark_factor().lower.transpose().triangularView<Eigen::Upper>().solveInPlace<Eigen::OnTheRight>(b);
      return b;
    };
    const auto core_of = [&](const Eigen::MatrixXd& cross) {
      Eigen::MatrixXd a(p, p);
      for (Eigen::Index c = 0; c < p; ++c) {
        a.row(c) = cross.row(static_cast<Eigen::Index>(layout.landmarks.indices[static_cast<std::size_t>(c)]));
      }
      // L^{-1} A L^{-T}
      lower.solveInPlace(a);
      Eigen::MatrixXd at = a.transpose();
      lower.solveInPlace(at);
      return Eigen::MatrixXd(0.5 * (at + at.transpose()));
    };

    auto g = std::make_shared<const Eigen::MatrixXd>(parent_.nystrom_factor());
    std::map<std::size_t, std::shared_ptr<const Eigen::MatrixXd>> g_j;
    std::map<std::size_t, Eigen::MatrixXd> s_j;
    for (auto& [j, m] : cross_j) {
      s_j[j] = core_of(m);
      g_j[j] = std::make_shared<const Eigen::MatrixXd>(whiten_rows(std::move(m)));
    }
    std::map<std::pair<std::size_t, std::size_t>, std::shared_ptr<const Eigen::MatrixXd>> g_jk;
    std::map<std::pair<std::size_t, std::size_t>, Eigen::MatrixXd> s_jk;
    for (auto& [jk, m] : cross_jk) {
      s_jk[jk] = core_of(m);
      g_jk[jk] = std::make_shared<const Eigen::MatrixXd>(whiten_rows(std::move(m)));
    }

    // Leaves: one jet pass per leaf fills every requested derivative.
    const std::size_t outputs = first_.size() + second_.size();
    std::vector<std::vector<Eigen::MatrixXd>> leaves(outputs,
                                                     std::vector<Eigen::MatrixXd>(leaf_ranges.size()));
    parallel_for(leaf_ranges.size(), [&](std::size_t i) {
      const IndexRange r = leaf_ranges[i];
      for (auto& out : leaves) out[i].resize(r.rows(), r.rows());
      for (Eigen::Index c = 0; c < r.rows(); ++c) {
        for (Eigen::Index a = 0; a <= c; ++a) {
          const KernelJet jet =
              model.jet(detail::column_distance(coords, r.first() + a, r.first() + c), theta, order);
          std::size_t o = 0;
          for (std::size_t j : first_) {
            leaves[o][i](a, c) = leaves[o][i](c, a) = jet.grad[j];
            ++o;
          }
          for (auto [j, k] : second_) {
            leaves[o][i](a, c) = leaves[o][i](c, a) = jet.hess[j][k];
            ++o;
          }
        }
      }
    });

    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(p, p);
    std::size_t o = 0;
    for (std::size_t j : first_) {
      DerivativeHodlr d;
      d.layout_ = layout_ptr;
      d.params_ = {j};
      d.leaves_ = std::move(leaves[o++]);
      d.factors_ = {g, g_j.at(j)};
      // (G_j, I, G), (G, -S_j, G), (G, I, G_j)
      d.terms_ = {{1, eye, 0}, {0, -s_j.at(j), 0}, {0, eye, 1}};
      d.finalize();
      first_out_.push_back(std::move(d));
    }
    for (auto [j, k] : second_) {
      DerivativeHodlr d;
      d.layout_ = layout_ptr;
      d.params_ = {j, k};
      d.leaves_ = std::move(leaves[o++]);
      // Factor slots: 0 = G, 1 = G_j, 2 = G_k, 3 = G_jk.
      d.factors_ = {g, g_j.at(j), g_j.at(k), g_jk.at({j, k})};
      const Eigen::MatrixXd& sj = s_j.at(j);
      const Eigen::MatrixXd& sk = s_j.at(k);
      const Eigen::MatrixXd& sjk = s_jk.at({j, k});
      d.terms_ = {
          {3, eye, 0},      // G_jk I G^T
          {1, -sk, 0},      // -G_j S_k G^T
          {1, eye, 2},      // G_j I G_k^T
          {2, -sj, 0},      // -G_k S_j G^T
          {0, sk * sj, 0},  // G S_k S_j G^T
          {0, -sjk, 0},     // -G S_jk G^T
          {0, sj * sk, 0},  // G S_j S_k G^T
          {0, -sj, 2},      // -G S_j G_k^T
          {2, eye, 1},      // G_k I G_j^T
          {0, -sk, 1},      // -G S_k G_j^T
          {0, eye, 3},      // G I G_jk^T
      };
      d.finalize();
      second_out_.push_back(std::move(d));
    }
  }

  const HodlrMatrix& parent_;
  std::vector<std::size_t> first_;
  std::vector<std::pair<std::size_t, std::size_t>> second_;
  std::vector<DerivativeHodlr> first_out_;
  std::vector<DerivativeHodlr> second_out_;
};

/// dSigma~/dtheta_j on the parent's tree.
inline DerivativeHodlr assemble_derivative(const HodlrMatrix& parent, std::size_t j) {
  DerivativeBuilder builder(parent, {j}, {});
  return builder.take_first().front();
}

/// d^2 Sigma~/dtheta_j dtheta_k on the parent's tree; symmetric in (j, k).
inline DerivativeHodlr assemble_second_derivative(const HodlrMatrix& parent, std::size_t j,
                                                  std::size_t k) {
  DerivativeBuilder builder(parent, {}, {{j, k}});
  return builder.take_second().front();
}

namespace detail {
inline void check_same_point(const CovarianceModel& model, const Eigen::VectorXd& theta,
                             const HodlrMatrix& parent) {
  if (model.id() != parent.model().id() || model.nu() != parent.model().nu() ||
      model.num_params() != parent.model().num_params() || theta.size() != parent.theta().size() ||
      theta != parent.theta()) {
    throw InvalidInput("derivative requested at a different model or theta than the parent");
  }
}
}  // namespace detail

inline DerivativeHodlr assemble_derivative(const CovarianceModel& model, const Eigen::VectorXd& theta,
                                           std::size_t j, const HodlrMatrix& parent) {
  detail::check_same_point(model, theta, parent);
  return assemble_derivative(parent, j);
}

inline DerivativeHodlr assemble_second_derivative(const CovarianceModel& model,
                                                  const Eigen::VectorXd& theta, std::size_t j,
                                                  std::size_t k, const HodlrMatrix& parent) {
  detail::check_same_point(model, theta, parent);
  return assemble_second_derivative(parent, j, k);
}

/// All first derivatives, plus all second derivatives when `with_second`.
inline DerivativeSet build_derivatives(const HodlrMatrix& parent, bool with_second) {
  const std::size_t m = parent.model().num_params();
  std::vector<std::size_t> first(m);
  for (std::size_t j = 0; j < m; ++j) first[j] = j;
  std::vector<std::pair<std::size_t, std::size_t>> second;
  if (with_second) {
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t k = j; k < m; ++k) second.emplace_back(j, k);
    }
  }
  DerivativeBuilder builder(parent, first, second);
  DerivativeSet set;
  set.num_params = m;
  set.first = builder.take_first();
  set.second = builder.take_second();
  return set;
}

inline Eigen::MatrixXd deriv_apply(const DerivativeHodlr& d, const Eigen::MatrixXd& x) {
  detail::check_rows("derivative matvec", d.n(), x.rows());
  return d.view().apply(x);
}

inline Eigen::VectorXd deriv_matvec(const DerivativeHodlr& d, const Eigen::VectorXd& v) {
  detail::check_rows("derivative matvec", d.n(), v.size());
  return d.view().apply(v);
}

inline Eigen::MatrixXd to_dense(const DerivativeHodlr& d, std::size_t cap = kDefaultDenseCap) {
  if (d.n() > cap) throw CapExceeded("derivative to_dense", d.n(), cap);
  return d.view().dense();
}

}  // namespace gphodlr
