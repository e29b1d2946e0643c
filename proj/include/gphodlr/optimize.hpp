#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "gphodlr/errors.hpp"

namespace gphodlr {

enum class Method { trust_region, gradient_only };

inline std::string_view to_string(Method m) {
  return m == Method::trust_region ? "trust_region" : "gradient_only";
}

inline Method parse_method(std::string_view name) {
  if (name == "trust_region" || name == "trust-region") return Method::trust_region;
  if (name == "gradient_only" || name == "gradient-only" || name == "lbfgs") return Method::gradient_only;
  throw InvalidInput("unknown optimizer method '" + std::string(name) +
                     "' (expected trust_region or gradient_only)");
}

struct OptimizerOptions {
  Method method = Method::trust_region;
  double rel_tol = 1e-8;
  int max_iters = 200;
  double initial_radius = 1.0;
  double max_radius = 100.0;
  bool log_scale = true;
  int lbfgs_memory = 6;
  /// Consecutive failed objective evaluations tolerated before giving up.
  int max_failures = 20;

  void validate() const {
    if (!(rel_tol > 0.0)) throw InvalidInput("rel_tol must be positive");
    if (max_iters < 1) throw InvalidInput("max_iters must be >= 1");
    if (!(initial_radius > 0.0) || !(max_radius >= initial_radius)) {
      throw InvalidInput("trust radius must satisfy 0 < initial_radius <= max_radius");
    }
    if (lbfgs_memory < 1) throw InvalidInput("lbfgs_memory must be >= 1");
  }
};

/// What the optimizer asks an objective for. order 0 = value, 1 = value and
/// gradient, 2 = additionally the Hessian and the expected Fisher matrix.
struct Evaluation {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;  // empty when not available
  Eigen::MatrixXd fisher;   // empty when not available
};

/// Objective in natural parameters. evaluate() may throw gphodlr::Error for
/// points where the covariance is not positive definite; the optimizer treats
/// that as a failed trial point.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual Evaluation evaluate(const Eigen::VectorXd& theta, int order) = 0;
};

class LambdaObjective : public Objective {
 public:
  explicit LambdaObjective(std::function<Evaluation(const Eigen::VectorXd&, int)> f) : f_(std::move(f)) {}
  Evaluation evaluate(const Eigen::VectorXd& theta, int order) override { return f_(theta, order); }

 private:
  std::function<Evaluation(const Eigen::VectorXd&, int)> f_;
};

/// Solution of min g^T s + 1/2 s^T B s subject to ||s|| <= radius.
struct TrustRegionStep {
  Eigen::VectorXd step;
  double lambda = 0.0;  // multiplier: (B + lambda I) s = -g
  bool on_boundary = false;
  bool hard_case = false;
};

/// Exact trust-region subproblem (More-Sorensen): safeguarded Newton on the
/// secular equation 1/radius - 1/||s(lambda)|| = 0 in the eigenbasis of B,
/// with the hard case handled by a step along the lowest eigenvector.
inline TrustRegionStep solve_trust_region(const Eigen::VectorXd& g, const Eigen::MatrixXd& b, double radius) {
  const auto m = g.size();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (b + b.transpose()));
  const Eigen::VectorXd& ev = eig.eigenvalues();  // ascending
  const Eigen::MatrixXd& q = eig.eigenvectors();
  const Eigen::VectorXd c = q.transpose() * g;
  const double lmin = ev(0);
  const double scale = std::max({1.0, ev.cwiseAbs().maxCoeff(), g.norm() / radius});
  const double tiny = 1e-14 * scale;

  auto step_norm = [&](double lambda) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) s += c(i) * c(i) / ((ev(i) + lambda) * (ev(i) + lambda));
    return std::sqrt(s);
  };
  auto step_at = [&](double lambda) {
    Eigen::VectorXd coef(m);
    for (Eigen::Index i = 0; i < m; ++i) coef(i) = -c(i) / (ev(i) + lambda);
    return Eigen::VectorXd(q * coef);
  };

  TrustRegionStep out;
  if (lmin > tiny) {
    const double inner = step_norm(0.0);
    if (inner <= radius) {
      out.step = step_at(0.0);
      return out;
    }
  }
  out.on_boundary = true;
  const double lambda_lo = std::max(0.0, -lmin);

  // Hard case: g has (numerically) no component along the lowest eigenspace
  // and the step restricted to the other directions stays inside.
  double c_low = 0.0;
  double s_rest = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (ev(i) - lmin <= tiny) {
      c_low += c(i) * c(i);
    } else {
      const double d = ev(i) + lambda_lo;
      s_rest += c(i) * c(i) / (d * d);
    }
  }
  c_low = std::sqrt(c_low);
  if (lmin <= tiny && c_low <= 1e-12 * std::max(g.norm(), 1e-300) && std::sqrt(s_rest) <= radius) {
    Eigen::VectorXd coef = Eigen::VectorXd::Zero(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      if (ev(i) - lmin > tiny) coef(i) = -c(i) / (ev(i) + lambda_lo);
    }
    coef(0) += std::sqrt(std::max(0.0, radius * radius - s_rest));
    out.step = q * coef;
    out.lambda = lambda_lo;
    out.hard_case = true;
    return out;
  }

  // ||s(lambda)|| decreases on (lambda_lo, inf); bracket the root.
  double lo = lambda_lo;
  double hi = lambda_lo + g.norm() / radius + ev.cwiseAbs().maxCoeff() + 1.0;
  while (step_norm(hi) > radius) hi *= 2.0;
  double lambda = hi;
  for (int it = 0; it < 200; ++it) {
    const double sn = step_norm(lambda);
    if (std::abs(sn - radius) <= 1e-13 * radius) break;
    if (sn > radius) {
      lo = lambda;
    } else {
      hi = lambda;
    }
    double w = 0.0;  // s^T (B + lambda I)^{-1} s
    for (Eigen::Index i = 0; i < m; ++i) w += c(i) * c(i) / std::pow(ev(i) + lambda, 3);
    double next = lambda + (sn * sn / w) * (sn - radius) / radius;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (next == lambda) break;
    lambda = next;
  }
  out.lambda = lambda;
  out.step = step_at(lambda);
  return out;
}

struct IterationRecord {
  int iteration = 0;
  Eigen::VectorXd theta;
  double objective = 0.0;
  double radius = 0.0;  // trust radius, or line-search step for gradient_only
  bool used_fisher = false;
};

/// 95% marginal intervals and pairwise confidence ellipses from a Fisher matrix.
struct ConfidenceEllipse {
  std::size_t i = 0;
  std::size_t j = 0;
  Eigen::Vector2d center;
  Eigen::Matrix2d covariance;  // (I^{-1}) restricted to (i, j)
  double chi2 = 0.0;           // region: (t - c)^T covariance^{-1} (t - c) <= chi2
  std::vector<Eigen::Vector2d> boundary;
};

struct ConfidenceOutput {
  bool available = false;
  std::string note;
  Eigen::VectorXd std_errors;
  Eigen::VectorXd ci_lower;
  Eigen::VectorXd ci_upper;
  std::vector<ConfidenceEllipse> ellipses;
};

inline constexpr double kZ975 = 1.959963984540054;
inline constexpr double kChi2Two95 = 5.991464547107979;

/// Intervals theta_j +- 1.96 se_j with se_j = sqrt((I^{-1})_jj). When
/// `log_scale`, `fisher` is taken in log-parameter coordinates and mapped
/// back to theta by the delta method (cov_theta = D cov_log D, D = diag(theta)).
inline ConfidenceOutput confidence_output(const Eigen::VectorXd& theta_hat, const Eigen::MatrixXd& fisher,
                                          bool log_scale = false, int boundary_points = 64) {
  ConfidenceOutput out;
  const auto m = theta_hat.size();
  if (fisher.rows() != m || fisher.cols() != m) {
    throw DimensionMismatch("confidence_output Fisher", static_cast<std::size_t>(m),
                            static_cast<std::size_t>(fisher.rows()));
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (fisher + fisher.transpose()));
  if (!fisher.allFinite() || llt.info() != Eigen::Success ||
      (llt.matrixLLT().diagonal().array() <= 0.0).any()) {
    out.note = "Fisher matrix is not positive definite; intervals unavailable";
    return out;
  }
  Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(m, m));
  if (log_scale) cov = theta_hat.asDiagonal() * cov * theta_hat.asDiagonal();
  out.available = true;
  out.std_errors = cov.diagonal().cwiseSqrt();
  out.ci_lower = theta_hat - kZ975 * out.std_errors;
  out.ci_upper = theta_hat + kZ975 * out.std_errors;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) {
      ConfidenceEllipse e;
      e.i = static_cast<std::size_t>(i);
      e.j = static_cast<std::size_t>(j);
      e.center << theta_hat(i), theta_hat(j);
      e.covariance << cov(i, i), cov(i, j), cov(j, i), cov(j, j);
      e.chi2 = kChi2Two95;
      const Eigen::Matrix2d root = Eigen::LLT<Eigen::Matrix2d>(e.covariance).matrixL();
      for (int k = 0; k < boundary_points; ++k) {
        const double a = 2.0 * std::numbers::pi * k / boundary_points;
        e.boundary.push_back(e.center + std::sqrt(e.chi2) * root * Eigen::Vector2d(std::cos(a), std::sin(a)));
      }
      out.ellipses.push_back(std::move(e));
    }
  }
  return out;
}

struct MLEReport {
  Eigen::VectorXd theta_hat;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string status;
  std::vector<IterationRecord> trace;
  std::size_t value_evals = 0;     // every objective evaluation
  std::size_t gradient_evals = 0;  // evaluations that included the gradient
  std::size_t hessian_evals = 0;
  std::size_t failed_evals = 0;
  Eigen::MatrixXd fisher_hat;  // natural parameters; filled by the fit drivers
  ConfidenceOutput confidence;
  std::map<std::string, double> timings;
};

namespace detail {

// Objective seen in working coordinates x: x = log(theta) or x = theta.
class WorkingObjective {
 public:
  WorkingObjective(Objective& f, bool log_scale, MLEReport& report)
      : f_(f), log_(log_scale), report_(report) {}

  Eigen::VectorXd to_theta(const Eigen::VectorXd& x) const { return log_ ? Eigen::VectorXd(x.array().exp()) : x; }
  Eigen::VectorXd to_x(const Eigen::VectorXd& theta) const {
    return log_ ? Eigen::VectorXd(theta.array().log()) : theta;
  }

  // Returns false when the objective failed at this point.
  bool evaluate(const Eigen::VectorXd& x, int order, Evaluation& out) {
    const Eigen::VectorXd theta = to_theta(x);
    ++report_.value_evals;
    if (order >= 1) ++report_.gradient_evals;
    if (order >= 2) ++report_.hessian_evals;
    try {
      if (!theta.allFinite()) throw InvalidInput("non-finite parameter");
      out = f_.evaluate(theta, order);
    } catch (const Error&) {
      ++report_.failed_evals;
      return false;
    }
    if (!std::isfinite(out.value)) {
      ++report_.failed_evals;
      return false;
    }
    if (log_ && order >= 1) {
      const Eigen::VectorXd g = out.gradient;
      out.gradient = theta.cwiseProduct(g);
      if (out.hessian.size() > 0) {
        out.hessian = theta.asDiagonal() * out.hessian * theta.asDiagonal();
        out.hessian.diagonal() += out.gradient;
      }
      if (out.fisher.size() > 0) out.fisher = theta.asDiagonal() * out.fisher * theta.asDiagonal();
    }
    return true;
  }

 private:
  Objective& f_;
  bool log_;
  MLEReport& report_;
};

inline bool small_change(double f_old, double f_new, double tol) {
  return std::abs(f_old - f_new) <= tol * std::max(1.0, std::abs(f_old));
}

}  // namespace detail

/// Second-order trust-region minimization. Uses the Hessian as the model
/// matrix, or the expected Fisher matrix when the Hessian is indefinite and a
/// Fisher matrix is provided. Stops when an accepted step changes the
/// objective by at most rel_tol relative, or when no step within the current
/// radius can change it by more than that.
inline MLEReport trust_region_minimize(Objective& objective, const Eigen::VectorXd& theta_init,
                                       const OptimizerOptions& opts = {}) {
  opts.validate();
  const auto start = std::chrono::steady_clock::now();
  MLEReport report;
  detail::WorkingObjective f(objective, opts.log_scale, report);
  Eigen::VectorXd x = f.to_x(theta_init);
  Evaluation cur;
  if (!f.evaluate(x, 2, cur)) throw NotPositiveDefinite("objective failed at the initial point");
  double radius = opts.initial_radius;
  int failures = 0;
  report.status = "max_iters";

  for (int it = 1; it <= opts.max_iters; ++it) {
    report.iterations = it;
    Eigen::MatrixXd b = cur.hessian;
    bool used_fisher = false;
    if (b.size() == 0) {
      if (cur.fisher.size() == 0) throw InvalidInput("trust region needs a Hessian or a Fisher matrix");
      b = cur.fisher;
      used_fisher = true;
    } else if (cur.fisher.size() > 0) {
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (b + b.transpose()), Eigen::EigenvaluesOnly);
      if (eig.eigenvalues()(0) <= 0.0) {
        b = cur.fisher;
        used_fisher = true;
      }
    }
    const TrustRegionStep tr = solve_trust_region(cur.gradient, b, radius);
    const double predicted = -(cur.gradient.dot(tr.step) + 0.5 * tr.step.dot(b * tr.step));
    report.trace.push_back({it, f.to_theta(x), cur.value, radius, used_fisher});
    if (!(predicted > 0.0) || tr.step.norm() == 0.0) {
      report.converged = true;
      report.status = "stationary";
      break;
    }

    Evaluation trial;
    const Eigen::VectorXd x_new = x + tr.step;
    if (!f.evaluate(x_new, 0, trial)) {
      radius *= 0.25;
      if (++failures >= opts.max_failures) {
        report.status = "diverged";
        break;
      }
      continue;
    }
    failures = 0;
    const double actual = cur.value - trial.value;
    const double rho = actual / predicted;
    if (rho < 0.1) {
      // Nothing inside this radius moves the objective beyond the tolerance.
      if (detail::small_change(cur.value, trial.value, opts.rel_tol) &&
          predicted <= opts.rel_tol * std::max(1.0, std::abs(cur.value))) {
        report.converged = true;
        report.status = "objective_stationary";
        break;
      }
      radius = 0.25 * tr.step.norm();
      continue;
    }
    const double f_old = cur.value;
    Evaluation next;
    if (!f.evaluate(x_new, 2, next)) {
      radius *= 0.25;
      continue;
    }
    x = x_new;
    cur = std::move(next);
    if (rho > 0.75 && tr.step.norm() >= 0.99 * radius) radius = std::min(2.0 * radius, opts.max_radius);
    if (detail::small_change(f_old, cur.value, opts.rel_tol)) {
      report.converged = true;
      report.status = "converged";
      report.iterations = it;
      break;
    }
  }
  report.theta_hat = f.to_theta(x);
  report.objective = cur.value;
  report.trace.push_back({report.iterations, report.theta_hat, cur.value, radius, false});
  report.timings["optimize"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

/// Limited-memory BFGS with Armijo backtracking, using only values and
/// gradients. Same stopping rule as the trust-region method.
inline MLEReport gradient_only_minimize(Objective& objective, const Eigen::VectorXd& theta_init,
                                        const OptimizerOptions& opts = {}) {
  opts.validate();
  const auto start = std::chrono::steady_clock::now();
  MLEReport report;
  detail::WorkingObjective f(objective, opts.log_scale, report);
  Eigen::VectorXd x = f.to_x(theta_init);
  Evaluation cur;
  if (!f.evaluate(x, 1, cur)) throw NotPositiveDefinite("objective failed at the initial point");
  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> memory;  // (s, y)
  report.status = "max_iters";

  for (int it = 1; it <= opts.max_iters; ++it) {
    report.iterations = it;
    // Two-loop recursion.
    Eigen::VectorXd d = -cur.gradient;
    std::vector<double> a(memory.size());
    for (std::size_t i = memory.size(); i-- > 0;) {
      const auto& [s, y] = memory[i];
      a[i] = s.dot(d) / y.dot(s);
      d -= a[i] * y;
    }
    if (!memory.empty()) {
      const auto& [s, y] = memory.back();
      d *= s.dot(y) / y.squaredNorm();
    } else {
      d *= std::min(1.0, opts.initial_radius / std::max(d.norm(), 1e-300));
    }
    for (std::size_t i = 0; i < memory.size(); ++i) {
      const auto& [s, y] = memory[i];
      const double bb = y.dot(d) / y.dot(s);
      d += (a[i] - bb) * s;
    }
    double slope = cur.gradient.dot(d);
    if (!(slope < 0.0)) {
      memory.clear();
      d = -cur.gradient * std::min(1.0, opts.initial_radius / std::max(cur.gradient.norm(), 1e-300));
      slope = cur.gradient.dot(d);
    }
    if (!(slope < 0.0)) {
      report.converged = true;
      report.status = "stationary";
      break;
    }
    if (d.norm() > opts.max_radius) {
      d *= opts.max_radius / d.norm();
      slope = cur.gradient.dot(d);
    }

    double step = 1.0;
    Evaluation trial;
    bool accepted = false;
    bool flat = false;
    for (int ls = 0; ls < 40; ++ls) {
      if (f.evaluate(x + step * d, 0, trial) && trial.value <= cur.value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      if (std::isfinite(trial.value) && detail::small_change(cur.value, trial.value, opts.rel_tol) &&
          std::abs(step * slope) <= opts.rel_tol * std::max(1.0, std::abs(cur.value))) {
        flat = true;
        break;
      }
      step *= 0.5;
    }
    report.trace.push_back({it, f.to_theta(x), cur.value, step, false});
    if (!accepted) {
      if (!memory.empty()) {
        // Retry once along the plain negative gradient.
        memory.clear();
        continue;
      }
      if (flat) {
        report.converged = true;
        report.status = "objective_stationary";
      } else {
        report.status = "line_search_failed";
      }
      break;
    }
    const Eigen::VectorXd x_new = x + step * d;
    Evaluation next;
    if (!f.evaluate(x_new, 1, next)) {
      report.status = "diverged";
      break;
    }
    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd y = next.gradient - cur.gradient;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      memory.emplace_back(s, y);
      if (static_cast<int>(memory.size()) > opts.lbfgs_memory) memory.pop_front();
    }
    const double f_old = cur.value;
    x = x_new;
    cur = std::move(next);
    if (detail::small_change(f_old, cur.value, opts.rel_tol)) {
      report.converged = true;
      report.status = "converged";
      break;
    }
  }
  report.theta_hat = f.to_theta(x);
  report.objective = cur.value;
  report.trace.push_back({report.iterations, report.theta_hat, cur.value, 0.0, false});
  report.timings["optimize"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

inline MLEReport minimize(Objective& objective, const Eigen::VectorXd& theta_init,
                          const OptimizerOptions& opts = {}) {
  return opts.method == Method::trust_region ? trust_region_minimize(objective, theta_init, opts)
                                             : gradient_only_minimize(objective, theta_init, opts);
}

}  // namespace gphodlr
