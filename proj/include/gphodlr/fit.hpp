#pragma once

#include <Eigen/Core>

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>

#include "gphodlr/geometry.hpp"
#include "gphodlr/hodlr.hpp"
#include "gphodlr/kernel.hpp"
#include "gphodlr/likelihood.hpp"
#include "gphodlr/optimize.hpp"
#include "gphodlr/oracle.hpp"

namespace gphodlr {

namespace detail {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace detail

/// -l_H with stochastic gradient, Hessian and Fisher on a fixed layout and
/// probe set. The last FitState is kept so that a derivative request at the
/// point just evaluated reuses its assembly and factorization.
class HodlrObjective : public Objective {
 public:
  HodlrObjective(CovarianceModel model, std::shared_ptr<const HodlrLayout> layout, Eigen::VectorXd y,
                 std::shared_ptr<const SaaVectors> saa)
      : model_(std::move(model)), layout_(std::move(layout)), y_(std::move(y)), saa_(std::move(saa)) {}

  Evaluation evaluate(const Eigen::VectorXd& theta, int order) override {
    const FitState& s = state(theta);
    Evaluation e;
    detail::Stopwatch clock;
    e.value = neg_loglik(s);
    if (order >= 1) e.gradient = stoch_gradient(s);
    if (order >= 2) {
      e.fisher = stoch_fisher(s);
      e.hessian = stoch_hessian(s, e.fisher);
    }
    timings_[order == 0 ? "value" : order == 1 ? "gradient" : "hessian"] += clock.seconds();
    return e;
  }

  const FitState& state(const Eigen::VectorXd& theta) {
    if (!last_ || last_->theta() != theta) {
      last_.reset();
      detail::Stopwatch clock;
      last_ = std::make_unique<FitState>(model_, theta, layout_, y_, saa_);
      timings_["assemble_factor"] += clock.seconds();
    }
    return *last_;
  }

  const std::map<std::string, double>& timings() const noexcept { return timings_; }

 private:
  CovarianceModel model_;
  std::shared_ptr<const HodlrLayout> layout_;
  Eigen::VectorXd y_;
  std::shared_ptr<const SaaVectors> saa_;
  std::unique_ptr<FitState> last_;
  std::map<std::string, double> timings_;
};

/// Exact dense -l with exact traces (n <= cap).
class ExactObjective : public Objective {
 public:
  ExactObjective(CovarianceModel model, PointSet points, Eigen::VectorXd y,
                 std::size_t cap = kDefaultDenseCap)
      : model_(std::move(model)), points_(std::move(points)), y_(std::move(y)), cap_(cap) {
    if (points_.size() > cap_) throw CapExceeded("exact objective", points_.size(), cap_);
    detail::check_rows("observation vector", points_.size(), y_.size());
  }

  Evaluation evaluate(const Eigen::VectorXd& theta, int order) override {
    detail::Stopwatch clock;
    const DenseModel d = dense_kernel_model(model_, theta, points_, cap_);
    const ExactDerivatives x = exact_derivatives(d, y_, order);
    Evaluation e;
    e.value = x.value;
    e.gradient = x.gradient;
    e.fisher = x.fisher;
    e.hessian = x.hessian;
    timings_[order == 0 ? "value" : order == 1 ? "gradient" : "hessian"] += clock.seconds();
    return e;
  }

  Eigen::MatrixXd fisher(const Eigen::VectorXd& theta) const {
    return exact_fisher(dense_kernel_model(model_, theta, points_, cap_));
  }

  const std::map<std::string, double>& timings() const noexcept { return timings_; }

 private:
  CovarianceModel model_;
  PointSet points_;
  Eigen::VectorXd y_;
  std::size_t cap_;
  std::map<std::string, double> timings_;
};

struct HodlrFitConfig {
  HodlrOptions hodlr;
  std::size_t saa_count = kDefaultSaaCount;
  std::uint64_t seed = 1;
  OptimizerOptions optimizer;
};

namespace detail {
inline void merge_timings(MLEReport& r, const std::map<std::string, double>& t) {
  for (const auto& [k, v] : t) r.timings[k] += v;
}
}  // namespace detail

/// Minimizes -l_H and attaches the stochastic Fisher matrix at theta_hat with
/// its confidence intervals.
inline MLEReport fit_hodlr(const CovarianceModel& model, const PointSet& points, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& theta_init, const HodlrFitConfig& config = {}) {
  detail::Stopwatch total;
  auto layout = make_layout(points, config.hodlr);
  auto saa = std::make_shared<const SaaVectors>(make_saa(points.size(), config.saa_count, config.seed));
  HodlrObjective objective(model, layout, y, saa);
  MLEReport report = minimize(objective, theta_init, config.optimizer);
  detail::Stopwatch fisher_clock;
  report.fisher_hat = stoch_fisher(objective.state(report.theta_hat));
  report.confidence = confidence_output(report.theta_hat, report.fisher_hat);
  report.timings["fisher"] = fisher_clock.seconds();
  detail::merge_timings(report, objective.timings());
  report.timings["total"] = total.seconds();
  return report;
}

/// Same optimizer driven by the exact dense likelihood; the Fisher matrix is exact.
inline MLEReport fit_exact(const CovarianceModel& model, const PointSet& points, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& theta_init, const OptimizerOptions& opts = {},
                           std::size_t cap = kDefaultDenseCap) {
  detail::Stopwatch total;
  ExactObjective objective(model, points, y, cap);
  MLEReport report = minimize(objective, theta_init, opts);
  detail::Stopwatch fisher_clock;
  report.fisher_hat = objective.fisher(report.theta_hat);
  report.confidence = confidence_output(report.theta_hat, report.fisher_hat);
  report.timings["fisher"] = fisher_clock.seconds();
  detail::merge_timings(report, objective.timings());
  report.timings["total"] = total.seconds();
  return report;
}

}  // namespace gphodlr
