#pragma once

// Slit-passing optimal control problem over the gyroscopic shaping vector a:
//
//   min_{a_0..a_{H-1}}  sum_k |hat(w_k) a_k|^2
//   s.t.  discrete closed-loop model with step T_mpc
//         eps(R_k) / (d(p_k) + eps1) - eps2 <= 0,   k = 1..H
//         |a_k^i| <= abar^i
//
// transcribed by single shooting. Gradients come from forward-mode autodiff
// through the same stepping code the simulator uses.

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <unsupported/Eigen/AutoDiff>

#include "lossless/controllers.hpp"
#include "lossless/integrators.hpp"
#include "lossless/nlp.hpp"
#include "lossless/rigid_body.hpp"
#include "lossless/so3.hpp"

namespace lossless {

/// Slit pose in the inertial frame and the two constraint constants.
struct SlitSpec {
  Vec3 p_star = Vec3::Zero();
  Rotation R_star;
  double eps1 = 0.005;  // regularizes the distance at the slit
  double eps2 = 0.1;    // admissible orientation error per unit distance

  void validate() const {
    if (!(eps1 > 0.0) || !(eps2 > 0.0)) {
      throw InvalidArgument("slit.eps1 and slit.eps2 must be positive");
    }
    if (!p_star.allFinite()) {
      throw InvalidArgument("slit.position must be finite");
    }
  }
};

/// 1 - (e3^T R^T R_star e3)^2, in [0, 1]. Zero when the body z-axis is
/// parallel or anti-parallel to the slit z-axis.
template <typename Scalar>
Scalar orientation_error(const Mat3T<Scalar>& R, const Mat3& R_star) {
  const Scalar c = R.col(2).dot(R_star.col(2).template cast<Scalar>());
  return Scalar(1) - c * c;
}

/// Squared distance to the slit in the inertial x-y plane [m^2].
template <typename Scalar>
Scalar slit_distance(const Vec3T<Scalar>& p, const SlitSpec& slit) {
  const Scalar dx = p(0) - Scalar(slit.p_star(0));
  const Scalar dy = p(1) - Scalar(slit.p_star(1));
  return dx * dx + dy * dy;
}

/// eps / (d + eps1) - eps2; the configuration is admissible iff this is < 0.
template <typename Scalar>
Scalar slit_constraint(const StateT<Scalar>& s, const SlitSpec& slit) {
  return orientation_error<Scalar>(s.R, slit.R_star.matrix()) / (slit_distance<Scalar>(s.p, slit) + Scalar(slit.eps1)) -
         Scalar(slit.eps2);
}

/// Nominal controller carried inside the prediction model.
struct NominalModel {
  AttitudeGains gains;
  SetPoint set_point;
};

struct OcpProblem {
  int horizon = 10;
  StepSize T_mpc{0.1};
  Vec3 a_bound = Vec3::Constant(5.0);
  SlitSpec slit;
  BodyParams body;
  State initial;
  std::optional<NominalModel> nominal;
  nlp::Options solver;

  void validate() const {
    if (horizon < 1) {
      throw InvalidArgument("mpc.horizon must be >= 1");
    }
    if (!(a_bound.array() > 0.0).all() || !a_bound.allFinite()) {
      throw InvalidArgument("mpc.a_bound entries must be positive");
    }
    slit.validate();
    body.validate();
    if (nominal) {
      nominal->gains.validate();
    }
  }
};

struct OcpSolution {
  std::vector<Vec3> a_seq;
  double cost = 0.0;
  double max_violation = 0.0;
  int iterations = 0;
  bool converged = false;
  double stationarity = 0.0;
  std::string status;
};

/// Predicts H steps from x0 with step T_mpc: f' = 0, tau_k = w_k x a_k plus
/// the nominal torque when the problem carries one. Returns H + 1 states.
template <typename Scalar>
std::vector<StateT<Scalar>> rollout(const StateT<Scalar>& x0, const std::vector<Vec3T<Scalar>>& a_seq,
                                    const OcpProblem& prob) {
  if (static_cast<int>(a_seq.size()) != prob.horizon) {
    throw InvalidArgument("rollout: a_seq length " + std::to_string(a_seq.size()) + " != horizon " +
                          std::to_string(prob.horizon));
  }
  std::vector<StateT<Scalar>> states;
  states.reserve(a_seq.size() + 1);
  states.push_back(x0);
  for (const auto& a : a_seq) {
    const StateT<Scalar>& s = states.back();
    ControlInputT<Scalar> u;
    u.a = a;
    if (prob.nominal) {
      u.tau_prime = nominal_attitude_torque<Scalar>(s.R, s.w, prob.nominal->set_point, prob.nominal->gains);
    }
    states.push_back(closed_loop_step<Scalar>(s, u, prob.body, prob.T_mpc));
  }
  return states;
}

/// sum_k |hat(w_k) a_k|^2 over k = 0..H-1.
template <typename Scalar>
Scalar ocp_cost(const std::vector<Vec3T<Scalar>>& a_seq, const std::vector<Vec3T<Scalar>>& w_seq) {
  if (a_seq.size() > w_seq.size()) {
    throw InvalidArgument("ocp_cost: fewer angular velocities than shaping vectors");
  }
  Scalar total(0);
  for (std::size_t k = 0; k < a_seq.size(); ++k) {
    total += w_seq[k].cross(a_seq[k]).squaredNorm();
  }
  return total;
}

namespace detail {

template <typename Scalar>
std::vector<Vec3T<Scalar>> unpack(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& x) {
  std::vector<Vec3T<Scalar>> out(static_cast<std::size_t>(x.size() / 3));
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = x.template segment<3>(3 * static_cast<Eigen::Index>(k));
  }
  return out;
}

template <typename Scalar>
StateT<Scalar> lift_state(const State& s) {
  return {s.p.cast<Scalar>(), s.R.cast<Scalar>(), s.v.cast<Scalar>(), s.w.cast<Scalar>()};
}

template <typename Scalar>
void objective_and_constraints(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& x, const OcpProblem& prob,
                               Scalar& cost, std::vector<Scalar>& g) {
  const auto a_seq = unpack<Scalar>(x);
  const auto states = rollout<Scalar>(lift_state<Scalar>(prob.initial), a_seq, prob);
  std::vector<Vec3T<Scalar>> w_seq;
  w_seq.reserve(a_seq.size());
  for (std::size_t k = 0; k < a_seq.size(); ++k) {
    w_seq.push_back(states[k].w);
  }
  cost = ocp_cost<Scalar>(a_seq, w_seq);
  g.clear();
  for (std::size_t k = 1; k < states.size(); ++k) {
    g.push_back(slit_constraint<Scalar>(states[k], prob.slit));
  }
}

// Derivative storage lives on the stack up to 60 decision variables (H <= 20).
inline constexpr int kMaxStackVariables = 60;

template <typename Derivative>
nlp::Evaluation evaluate_with_autodiff(const Eigen::VectorXd& x, const OcpProblem& prob) {
  using Ad = Eigen::AutoDiffScalar<Derivative>;
  const Eigen::Index n = x.size();
  Eigen::Matrix<Ad, Eigen::Dynamic, 1> xa(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    xa(i) = Ad(x(i), static_cast<int>(n), static_cast<int>(i));
  }
  Ad cost;
  std::vector<Ad> g;
  objective_and_constraints<Ad>(xa, prob, cost, g);
  nlp::Evaluation e;
  e.f = cost.value();
  e.grad_f = Eigen::VectorXd::Zero(n);
  if (cost.derivatives().size() == n) e.grad_f = cost.derivatives();
  e.g.resize(static_cast<Eigen::Index>(g.size()));
  e.jac_g = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(g.size()), n);
  for (std::size_t i = 0; i < g.size(); ++i) {
    e.g(static_cast<Eigen::Index>(i)) = g[i].value();
    if (g[i].derivatives().size() == n) {
      e.jac_g.row(static_cast<Eigen::Index>(i)) = g[i].derivatives().transpose();
    }
  }
  return e;
}

}  // namespace detail

/// Objective and constraint values (and optionally exact derivatives) of the
/// transcribed problem at a stacked decision vector x = [a_0; ...; a_{H-1}].
inline nlp::Evaluation evaluate_ocp(const OcpProblem& prob, const Eigen::VectorXd& x, bool with_derivatives) {
  if (!with_derivatives) {
    double cost = 0.0;
    std::vector<double> g;
    detail::objective_and_constraints<double>(x, prob, cost, g);
    nlp::Evaluation e;
    e.f = cost;
    e.g = Eigen::Map<const Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size()));
    return e;
  }
  if (x.size() <= detail::kMaxStackVariables) {
    using Bounded = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, detail::kMaxStackVariables, 1>;
    return detail::evaluate_with_autodiff<Bounded>(x, prob);
  }
  return detail::evaluate_with_autodiff<Eigen::VectorXd>(x, prob);
}

inline Eigen::VectorXd pack(const std::vector<Vec3>& a_seq) {
  Eigen::VectorXd x(3 * static_cast<Eigen::Index>(a_seq.size()));
  for (std::size_t k = 0; k < a_seq.size(); ++k) {
    x.segment<3>(3 * static_cast<Eigen::Index>(k)) = a_seq[k];
  }
  return x;
}

/// Solves the OCP from the warm start (zero when absent). The returned
/// sequence always lies in the box; converged reports stationarity of the
/// last subproblem together with max_violation <= violation tolerance.
inline OcpSolution solve_ocp(const OcpProblem& prob, const std::optional<std::vector<Vec3>>& warm_start = std::nullopt) {
  prob.validate();
  const auto n = static_cast<Eigen::Index>(3 * prob.horizon);
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(n);
  if (warm_start) {
    if (static_cast<int>(warm_start->size()) != prob.horizon) {
      throw InvalidArgument("solve_ocp: warm start length does not match the horizon");
    }
    x0 = pack(*warm_start);
  }
  Eigen::VectorXd hi(n);
  for (int k = 0; k < prob.horizon; ++k) {
    hi.segment<3>(3 * k) = prob.a_bound;
  }
  const Eigen::VectorXd lo = -hi;
  const nlp::Model model = [&prob](const Eigen::VectorXd& x, bool with_derivatives) {
    return evaluate_ocp(prob, x, with_derivatives);
  };
  const nlp::Result r = nlp::solve(model, x0, lo, hi, prob.solver);

  OcpSolution sol;
  sol.a_seq = detail::unpack<double>(r.x);
  sol.cost = r.f;
  sol.max_violation = r.max_violation;
  sol.iterations = r.iterations;
  sol.converged = r.converged;
  sol.stationarity = r.stationarity;
  sol.status = r.status;
  return sol;
}

struct MpcDiagnostics {
  double cost = 0.0;
  double max_violation = 0.0;
  int iterations = 0;
  bool converged = false;
  bool fallback = false;  // solver threw; previous a_hold kept
  std::string message;
};

/// Receding-horizon controller state: the held shaping vector and the last
/// optimal sequence used to warm start the next solve.
class MpcController {
 public:
  explicit MpcController(OcpProblem problem) : problem_(std::move(problem)) { problem_.validate(); }

  /// Solves from s, warm started with the previous solution shifted by one
  /// knot (last element duplicated), and returns the first element. When the
  /// solver throws, the previous a_hold is returned and the failure is noted
  /// in diagnostics(); any a keeps the closed loop passive.
  Vec3 step(const State& s) {
    problem_.initial = s;
    std::optional<std::vector<Vec3>> warm;
    if (!previous_.empty()) {
      std::vector<Vec3> shifted(previous_.begin() + 1, previous_.end());
      shifted.push_back(previous_.back());
      warm = std::move(shifted);
    }
    try {
      OcpSolution sol = solve_ocp(problem_, warm);
      diagnostics_ = {sol.cost, sol.max_violation, sol.iterations, sol.converged, false, sol.status};
      previous_ = std::move(sol.a_seq);
      a_hold_ = previous_.front();
    } catch (const Error& e) {
      diagnostics_ = {0.0, std::numeric_limits<double>::quiet_NaN(), 0, false, true, e.what()};
      ++fallbacks_;
    }
    return a_hold_;
  }

  [[nodiscard]] const Vec3& a_hold() const { return a_hold_; }
  [[nodiscard]] const MpcDiagnostics& diagnostics() const { return diagnostics_; }
  [[nodiscard]] const std::vector<Vec3>& last_solution() const { return previous_; }
  [[nodiscard]] int fallback_count() const { return fallbacks_; }
  [[nodiscard]] const OcpProblem& problem() const { return problem_; }

 private:
  OcpProblem problem_;
  std::vector<Vec3> previous_;
  Vec3 a_hold_ = Vec3::Zero();
  MpcDiagnostics diagnostics_;
  int fallbacks_ = 0;
};

/// Free-function form of MpcController::step.
inline Vec3 mpc_step(MpcController& controller, const State& s) { return controller.step(s); }

}  // namespace lossless
