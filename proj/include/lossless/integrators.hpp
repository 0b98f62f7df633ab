#pragma once

// Discrete stepping of the gravity-compensated rigid body: explicit Euler for
// the translational part and the explicit Lie-Newmark scheme with a Cayley
// retraction for the rotational part.

#include <exception>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lossless/rigid_body.hpp"
#include "lossless/so3.hpp"

namespace lossless {

/// Sample time in seconds, 0 < T <= 1.
class StepSize {
 public:
  explicit StepSize(double seconds) : seconds_(seconds) {
    if (!(seconds > 0.0 && seconds <= 1.0)) {
      throw InvalidArgument("step size must satisfy 0 < T <= 1, got " + std::to_string(seconds));
    }
  }
  [[nodiscard]] double seconds() const { return seconds_; }

 private:
  double seconds_;
};

template <typename Scalar>
struct TranslationState {
  Vec3T<Scalar> p;
  Vec3T<Scalar> v;
};

template <typename Scalar>
struct AttitudeState {
  Mat3T<Scalar> R;
  Vec3T<Scalar> w;
};

/// p' = p + T v,  v' = v + (T/m)(-m g e3 + R f_body).
template <typename Scalar>
TranslationState<Scalar> euler_translation_step(const Vec3T<Scalar>& p, const Vec3T<Scalar>& v,
                                                const Vec3T<Scalar>& f_body, const Mat3T<Scalar>& R,
                                                const BodyParams& b, StepSize step) {
  const double T = step.seconds();
  const Vec3T<Scalar> weight(Scalar(0), Scalar(0), Scalar(-b.mass * b.gravity));
  return {p + Scalar(T) * v, v + Scalar(T / b.mass) * (weight + R * f_body)};
}

/// One explicit Lie-Newmark step with the torque held over the whole step:
///   w_h = w + T/2 J^{-1}(J w x w + tau)
///   R'  = R cay(T w_h)
///   w'  = w_h + T/2 J^{-1}(J w_h x w_h + tau)
template <typename Scalar>
AttitudeState<Scalar> lie_newmark_step(const Mat3T<Scalar>& R, const Vec3T<Scalar>& w, const Vec3T<Scalar>& tau,
                                       const BodyParams& b, StepSize step) {
  const Scalar half_T(0.5 * step.seconds());
  const auto accel = [&](const Vec3T<Scalar>& omega) {
    return apply_inverse_inertia<Scalar>(b, apply_inertia<Scalar>(b, omega).cross(omega) + tau);
  };
  const Vec3T<Scalar> w_half = w + half_T * accel(w);
  const Vec3T<Scalar> rotation_increment = Scalar(step.seconds()) * w_half;
  return {R * cay<Scalar>(rotation_increment), w_half + half_T * accel(w_half)};
}

/// Advances the full state by one step with the inputs held: gravity
/// compensation f = R^T(m g e3 + f') and tau = w x a + tau'.
template <typename Scalar>
StateT<Scalar> closed_loop_step(const StateT<Scalar>& s, const ControlInputT<Scalar>& u, const BodyParams& b,
                                StepSize step) {
  const Vec3T<Scalar> f_body = gravity_comp_body_force<Scalar>(b, s.R, u.f_prime);
  const Vec3T<Scalar> tau = s.w.cross(u.a) + u.tau_prime;
  const auto tr = euler_translation_step<Scalar>(s.p, s.v, f_body, s.R, b, step);
  const auto at = lie_newmark_step<Scalar>(s.R, s.w, tau, b, step);
  return {tr.p, at.R, tr.v, at.w};
}

/// State at t_k together with the input held over [t_k, t_k+1).
struct SimRecord {
  long step = 0;
  double t = 0.0;
  State state;
  ControlInput input;
  Vec3 tau_total = Vec3::Zero();
};

using ControlLaw = std::function<ControlInput(long, const State&)>;

struct SimulationOptions {
  /// Re-orthonormalize R after every step. Off by default: the Cayley update
  /// already stays on SO(3) to rounding.
  bool reproject = false;
};

/// Runs n_steps of closed_loop_step and returns n_steps + 1 records. Record k
/// holds the state at t_k = k T and the input applied on that step; the last
/// record holds the final state and repeats the last applied input.
/// Exceptions from the control law are rethrown as ControlLawFailure.
inline std::vector<SimRecord> simulate(const State& s0, const ControlLaw& control_law, const BodyParams& b,
                                       StepSize step, long n_steps, const SimulationOptions& options = {}) {
  if (n_steps < 1) {
    throw InvalidArgument("simulate: n_steps must be >= 1");
  }
  b.validate();
  std::vector<SimRecord> out;
  out.reserve(static_cast<std::size_t>(n_steps) + 1);
  State s = s0;
  for (long k = 0; k < n_steps; ++k) {
    ControlInput u;
    try {
      u = control_law(k, s);
    } catch (const ControlLawFailure&) {
      throw;
    } catch (const std::exception& e) {
      throw ControlLawFailure(k, e.what());
    }
    out.push_back({k, static_cast<double>(k) * step.seconds(), s, u, s.w.cross(u.a) + u.tau_prime});
    s = closed_loop_step<double>(s, u, b, step);
    if (options.reproject) {
      s.R = project_to_so3(s.R);
    }
  }
  SimRecord last = out.back();
  last.step = n_steps;
  last.t = static_cast<double>(n_steps) * step.seconds();
  last.state = s;
  last.tau_total = s.w.cross(last.input.a) + last.input.tau_prime;
  out.push_back(last);
  return out;
}

}  // namespace lossless
