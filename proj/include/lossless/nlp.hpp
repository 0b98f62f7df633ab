#pragma once

// Small dense NLP solver for
//
//   min f(x)  s.t.  g_i(x) <= 0,  lo <= x <= hi
//
// Inequalities are handled with a Powell-Hestenes-Rockafellar augmented
// Lagrangian; each subproblem is a bound-constrained minimization solved by a
// projected BFGS method with an Armijo search along the projection arc.
// Intended for a few dozen variables, so everything is dense.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "lossless/errors.hpp"

namespace lossless::nlp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Objective and constraint values at a point. Derivatives are filled only
/// when requested.
struct Evaluation {
  double f = 0.0;
  VectorXd g;        // constraint values, feasible iff all <= 0
  VectorXd grad_f;   // n
  MatrixXd jac_g;    // m x n
};

using Model = std::function<Evaluation(const VectorXd& x, bool with_derivatives)>;

struct Options {
  double stationarity_tol = 1e-8;   // on ||P(x - grad L) - x||_inf
  double violation_tol = 1e-6;      // on max(0, max_i g_i)
  int max_iterations = 200;         // quasi-Newton iterations summed over all subproblems
  int max_outer = 30;
  double initial_penalty = 10.0;
  double penalty_growth = 10.0;
  double max_penalty = 1e12;
  /// Rescale each constraint by 1/||grad g_i||_inf at the start point (clamped
  /// to [1/max_constraint_scale, max_constraint_scale]) before forming the
  /// augmented Lagrangian. Tolerances and reported values stay unscaled.
  bool scale_constraints = true;
  double max_constraint_scale = 1e4;
};

struct Result {
  VectorXd x;
  double f = 0.0;
  VectorXd g;
  VectorXd multipliers;
  double max_violation = 0.0;
  double stationarity = 0.0;
  int iterations = 0;
  int outer_iterations = 0;
  bool converged = false;
  std::string status;
};

inline VectorXd project(const VectorXd& x, const VectorXd& lo, const VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

inline double max_violation(const VectorXd& g) {
  return g.size() == 0 ? 0.0 : std::max(0.0, g.maxCoeff());
}

/// Per-constraint factors that bring the gradient rows to unit infinity norm.
inline VectorXd constraint_scale(const MatrixXd& jac_g, double max_scale) {
  VectorXd scale = VectorXd::Ones(jac_g.rows());
  for (Eigen::Index i = 0; i < jac_g.rows(); ++i) {
    const double norm = jac_g.row(i).lpNorm<Eigen::Infinity>();
    if (norm > 0.0) {
      scale(i) = std::clamp(1.0 / norm, 1.0 / max_scale, max_scale);
    }
  }
  return scale;
}

namespace detail {

struct AugmentedPoint {
  VectorXd x;
  Evaluation eval;
  double merit = 0.0;
  VectorXd grad;  // gradient of the merit, valid when has_grad
  bool has_grad = false;
};

class AugmentedLagrangian {
 public:
  AugmentedLagrangian(const Model& model, const VectorXd& lo, const VectorXd& hi)
      : model_(model), lo_(lo), hi_(hi) {}

  void set_multipliers(const VectorXd& lambda, double penalty) {
    lambda_ = lambda;
    penalty_ = penalty;
  }

  // PHR merit: f + sum (max(0, l + r g)^2 - l^2) / (2 r).
  [[nodiscard]] double merit(const Evaluation& e) const {
    double m = e.f;
    for (Eigen::Index i = 0; i < e.g.size(); ++i) {
      const double shifted = std::max(0.0, lambda_(i) + penalty_ * e.g(i));
      m += (shifted * shifted - lambda_(i) * lambda_(i)) / (2.0 * penalty_);
    }
    return m;
  }

  [[nodiscard]] VectorXd merit_gradient(const Evaluation& e) const {
    VectorXd grad = e.grad_f;
    for (Eigen::Index i = 0; i < e.g.size(); ++i) {
      const double shifted = std::max(0.0, lambda_(i) + penalty_ * e.g(i));
      if (shifted > 0.0) {
        grad += shifted * e.jac_g.row(i).transpose();
      }
    }
    return grad;
  }

  [[nodiscard]] VectorXd updated_multipliers(const Evaluation& e) const {
    return (lambda_ + penalty_ * e.g).cwiseMax(0.0);
  }

  AugmentedPoint evaluate(const VectorXd& x, bool with_derivatives) const {
    AugmentedPoint pt;
    pt.x = x;
    pt.eval = model_(x, with_derivatives);
    pt.merit = merit(pt.eval);
    if (with_derivatives) {
      pt.grad = merit_gradient(pt.eval);
      pt.has_grad = true;
    }
    return pt;
  }

  void ensure_gradient(AugmentedPoint& pt) const {
    if (!pt.has_grad) {
      pt = evaluate(pt.x, true);
    }
  }

  [[nodiscard]] double stationarity(const AugmentedPoint& pt) const {
    return (project(pt.x - pt.grad, lo_, hi_) - pt.x).lpNorm<Eigen::Infinity>();
  }

  [[nodiscard]] const VectorXd& lo() const { return lo_; }
  [[nodiscard]] const VectorXd& hi() const { return hi_; }

 private:
  const Model& model_;
  VectorXd lo_;
  VectorXd hi_;
  VectorXd lambda_;
  double penalty_ = 1.0;
};

// Projected BFGS on the current augmented Lagrangian. Returns the final
// point (with gradient) and updates the shared iteration budget.
inline AugmentedPoint minimize_subproblem(const AugmentedLagrangian& al, AugmentedPoint pt, double tol,
                                          int& budget, int& iterations) {
  const Eigen::Index n = pt.x.size();
  al.ensure_gradient(pt);
  MatrixXd inv_hessian = MatrixXd::Identity(n, n);
  bool fresh_hessian = true;

  while (budget > 0) {
    const double stat = al.stationarity(pt);
    if (stat <= tol) {
      break;
    }
    // Variables pinned at a bound with the gradient pushing outward.
    const double band = std::min(1e-3, stat);
    std::vector<bool> active(static_cast<std::size_t>(n), false);
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool at_lo = pt.x(i) <= al.lo()(i) + band && pt.grad(i) > 0.0;
      const bool at_hi = pt.x(i) >= al.hi()(i) - band && pt.grad(i) < 0.0;
      active[static_cast<std::size_t>(i)] = at_lo || at_hi;
    }
    VectorXd dir = VectorXd::Zero(n);
    {
      VectorXd g_free = pt.grad;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (active[static_cast<std::size_t>(i)]) g_free(i) = 0.0;
      }
      dir = -(inv_hessian * g_free);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (active[static_cast<std::size_t>(i)]) dir(i) = -pt.grad(i);
      }
    }
    if (pt.grad.dot(dir) >= 0.0) {
      inv_hessian.setIdentity();
      fresh_hessian = true;
      dir = -pt.grad;
    }

    double step = 1.0;
    AugmentedPoint trial;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      const VectorXd x_trial = project(pt.x + step * dir, al.lo(), al.hi());
      trial = al.evaluate(x_trial, false);
      const double decrease = pt.grad.dot(x_trial - pt.x);
      if (!(decrease < 0.0)) {
        step *= 0.5;
        continue;  // the projection left no descent along this arc point
      }
      if (std::isfinite(trial.merit) && trial.merit <= pt.merit + 1e-4 * decrease && trial.merit < pt.merit) {
        accepted = true;
        break;
      }
      // Near a solution the Armijo decrease drops below the rounding level of
      // the merit. Accept a step there if it reduces stationarity.
      if (std::abs(trial.merit - pt.merit) <= 1e-12 * std::max(1.0, std::abs(pt.merit))) {
        al.ensure_gradient(trial);
        if (al.stationarity(trial) < 0.5 * al.stationarity(pt)) {
          accepted = true;
          break;
        }
      }
      step *= 0.5;
    }
    --budget;
    ++iterations;
    if (!accepted) {
      if (fresh_hessian) {
        break;  // even steepest descent cannot make progress
      }
      inv_hessian.setIdentity();
      fresh_hessian = true;
      continue;
    }
    al.ensure_gradient(trial);
    const VectorXd s = trial.x - pt.x;
    const VectorXd y = trial.grad - pt.grad;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm() && sy > 0.0) {
      if (fresh_hessian) {
        inv_hessian = MatrixXd::Identity(n, n) * (sy / y.squaredNorm());
        fresh_hessian = false;
      }
      const double rho = 1.0 / sy;
      const MatrixXd left = MatrixXd::Identity(n, n) - rho * s * y.transpose();
      inv_hessian = left * inv_hessian * left.transpose() + rho * s * s.transpose();
    }
    pt = std::move(trial);
  }
  return pt;
}

}  // namespace detail

/// Solves the problem from x0 (projected into the box first).
///
/// Throws NonFiniteObjective when f or g is not finite at the starting point.
/// Running out of iterations is not an error: the best point found is
/// returned with converged == false.
inline Result solve(const Model& model, const VectorXd& x0, const VectorXd& lo, const VectorXd& hi,
                    const Options& opt = {}) {
  if (lo.size() != x0.size() || hi.size() != x0.size()) {
    throw InvalidArgument("nlp::solve: bound dimension mismatch");
  }
  if ((lo.array() > hi.array()).any()) {
    throw InvalidArgument("nlp::solve: lower bound exceeds upper bound");
  }
  const VectorXd start = project(x0, lo, hi);
  Evaluation first = model(start, true);
  if (!std::isfinite(first.f) || !first.g.allFinite() || !first.grad_f.allFinite() || !first.jac_g.allFinite()) {
    throw NonFiniteObjective("objective or constraints are not finite at the initial point");
  }
  const VectorXd scale = opt.scale_constraints ? constraint_scale(first.jac_g, opt.max_constraint_scale)
                                               : VectorXd::Ones(first.g.size());
  const Model scaled = [&model, &scale](const VectorXd& x, bool with_derivatives) {
    Evaluation e = model(x, with_derivatives);
    e.g = e.g.cwiseProduct(scale);
    if (with_derivatives) {
      e.jac_g = scale.asDiagonal() * e.jac_g;
    }
    return e;
  };
  first.g = first.g.cwiseProduct(scale);
  first.jac_g = scale.asDiagonal() * first.jac_g;
  const auto unscaled_violation = [&scale](const VectorXd& g) { return max_violation(g.cwiseQuotient(scale)); };
  detail::AugmentedLagrangian al(scaled, lo, hi);

  VectorXd lambda = VectorXd::Zero(first.g.size());
  double penalty = opt.initial_penalty;
  al.set_multipliers(lambda, penalty);

  detail::AugmentedPoint pt;
  pt.x = start;
  pt.eval = std::move(first);
  pt.merit = al.merit(pt.eval);
  pt.grad = al.merit_gradient(pt.eval);
  pt.has_grad = true;

  Result best;
  auto record_best = [&](const detail::AugmentedPoint& p, double stat) {
    const double viol = unscaled_violation(p.eval.g);
    const bool better = best.x.size() == 0 || viol < best.max_violation - 1e-12 ||
                        (viol <= best.max_violation + 1e-12 && p.eval.f < best.f);
    if (better) {
      best.x = p.x;
      best.f = p.eval.f;
      best.g = p.eval.g.cwiseQuotient(scale);
      best.max_violation = viol;
      best.stationarity = stat;
    }
  };

  int budget = opt.max_iterations;
  int iterations = 0;
  double subproblem_tol = std::max(opt.stationarity_tol, 1e-3);
  double prev_violation = unscaled_violation(pt.eval.g);
  int outer = 0;
  bool converged = false;

  for (; outer < opt.max_outer; ++outer) {
    pt.merit = al.merit(pt.eval);
    pt.grad = al.merit_gradient(pt.eval);
    pt = detail::minimize_subproblem(al, std::move(pt), subproblem_tol, budget, iterations);
    const double stat = al.stationarity(pt);
    const double viol = unscaled_violation(pt.eval.g);
    record_best(pt, stat);

    if (viol <= opt.violation_tol && stat <= opt.stationarity_tol) {
      converged = true;
      best.x = pt.x;
      best.f = pt.eval.f;
      best.g = pt.eval.g.cwiseQuotient(scale);
      best.max_violation = viol;
      best.stationarity = stat;
      lambda = al.updated_multipliers(pt.eval);
      ++outer;
      break;
    }
    if (budget <= 0) {
      ++outer;
      break;
    }
    lambda = al.updated_multipliers(pt.eval);
    if (viol > opt.violation_tol && viol > 0.25 * prev_violation) {
      penalty = std::min(opt.max_penalty, penalty * opt.penalty_growth);
    }
    prev_violation = viol;
    subproblem_tol = std::max(opt.stationarity_tol, subproblem_tol * 0.01);
    al.set_multipliers(lambda, penalty);
  }

  best.multipliers = lambda.cwiseProduct(scale);
  best.iterations = iterations;
  best.outer_iterations = outer;
  best.converged = converged;
  best.status = converged ? "converged" : (budget <= 0 ? "max_iterations" : "stalled");
  return best;
}

}  // namespace lossless::nlp
