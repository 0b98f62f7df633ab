#pragma once

// Continuous-time rigid body on SE(3) under gravity compensation and a
// torque of the form tau = w x a + tau'. Positions and linear velocity live
// in the inertial frame, angular velocity and applied wrench in the body
// (principal) frame. SI units throughout.

#include <cmath>
#include <string>

#include "lossless/so3.hpp"

namespace lossless {

inline constexpr double kDefaultGravity = 9.81;

/// Mass, principal inertia and gravitational acceleration.
struct BodyParams {
  double mass = 1.0;
  Mat3 inertia = Mat3::Identity();
  double gravity = kDefaultGravity;

  /// Throws InvalidArgument unless mass > 0, inertia is diagonal with
  /// positive entries and gravity >= 0. Off-diagonal inertia is rejected
  /// rather than symmetrized: the body frame must be the principal frame.
  void validate() const {
    if (!(mass > 0.0) || !std::isfinite(mass)) {
      throw InvalidArgument("body.mass must be positive, got " + std::to_string(mass));
    }
    if (!inertia.allFinite()) {
      throw InvalidArgument("body.inertia must be finite");
    }
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        if (i != j && inertia(i, j) != 0.0) {
          throw InvalidArgument("body.inertia must be diagonal (principal frame)");
        }
      }
      if (!(inertia(i, i) > 0.0)) {
        throw InvalidArgument("body.inertia diagonal entries must be positive");
      }
    }
    if (!(gravity >= 0.0) || !std::isfinite(gravity)) {
      throw InvalidArgument("body.gravity must be non-negative");
    }
  }

  [[nodiscard]] Vec3 inertia_diagonal() const { return inertia.diagonal(); }
};

/// Builds and validates a body with J = diag(jx, jy, jz).
inline BodyParams make_body(double mass, const Vec3& inertia_diag, double gravity = kDefaultGravity) {
  BodyParams b{mass, inertia_diag.asDiagonal(), gravity};
  b.validate();
  return b;
}

template <typename Scalar>
struct StateT {
  Vec3T<Scalar> p = Vec3T<Scalar>::Zero();                // inertial position [m]
  Mat3T<Scalar> R = Mat3T<Scalar>::Identity();            // body -> inertial
  Vec3T<Scalar> v = Vec3T<Scalar>::Zero();                // inertial velocity [m/s]
  Vec3T<Scalar> w = Vec3T<Scalar>::Zero();                // body angular velocity [rad/s]
};
using State = StateT<double>;

/// Residual force f' (after gravity compensation), nominal torque tau' and
/// the gyroscopic shaping vector a. The applied torque is w x a + tau'.
template <typename Scalar>
struct ControlInputT {
  Vec3T<Scalar> f_prime = Vec3T<Scalar>::Zero();
  Vec3T<Scalar> tau_prime = Vec3T<Scalar>::Zero();
  Vec3T<Scalar> a = Vec3T<Scalar>::Zero();
};
using ControlInput = ControlInputT<double>;

struct StateDerivative {
  Vec3 dp;
  Mat3 dR;  // R * hat(w)
  Vec3 dv;
  Vec3 dw;
};

template <typename Scalar>
Vec3T<Scalar> apply_inverse_inertia(const BodyParams& b, const Vec3T<Scalar>& x) {
  return Vec3T<Scalar>(x(0) / b.inertia(0, 0), x(1) / b.inertia(1, 1), x(2) / b.inertia(2, 2));
}

template <typename Scalar>
Vec3T<Scalar> apply_inertia(const BodyParams& b, const Vec3T<Scalar>& x) {
  return Vec3T<Scalar>(x(0) * b.inertia(0, 0), x(1) * b.inertia(1, 1), x(2) * b.inertia(2, 2));
}

/// K = m v.v / 2 + w.J w / 2.
template <typename Scalar>
Scalar kinetic_energy(const StateT<Scalar>& s, const BodyParams& b) {
  return Scalar(0.5 * b.mass) * s.v.squaredNorm() + Scalar(0.5) * s.w.dot(apply_inertia(b, s.w));
}

inline void require_symmetric(const Mat3& g) {
  if ((g - g.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw AsymmetricGain("stiffness matrix G must be symmetric");
  }
}

/// Attitude potential U = -tr(G (R_d^T R - I)); zero at R = R_d.
inline double potential_energy(const Mat3& R, const Mat3& G, const Mat3& R_d) {
  require_symmetric(G);
  return -(G * (R_d.transpose() * R - Mat3::Identity())).trace();
}

/// V = K + U, the storage function of the attitude-stabilized body.
inline double lyapunov(const State& s, const BodyParams& b, const Mat3& G, const Mat3& R_d) {
  return kinetic_energy(s, b) + potential_energy(s.R, G, R_d);
}

/// Body-frame force f = R^T (m g e3 + f') that cancels gravity and leaves
/// m dv/dt = f'.
template <typename Scalar>
Vec3T<Scalar> gravity_comp_body_force(const BodyParams& b, const Mat3T<Scalar>& R, const Vec3T<Scalar>& f_prime) {
  const Vec3T<Scalar> lift(Scalar(0), Scalar(0), Scalar(b.mass * b.gravity));
  return R.transpose() * (lift + f_prime);
}

/// Right-hand side of the gravity-compensated closed loop:
///   dp = v, dR = R w^, m dv = f', J dw = -w x (J w - a) + tau'.
inline StateDerivative closed_loop_derivative(const State& s, const ControlInput& u, const BodyParams& b) {
  StateDerivative d;
  d.dp = s.v;
  d.dR = s.R * hat(s.w);
  d.dv = u.f_prime / b.mass;
  d.dw = apply_inverse_inertia<double>(b, -s.w.cross(apply_inertia(b, s.w) - u.a) + u.tau_prime);
  return d;
}

/// Supplied power v.f' + w.tau'. Equal to dK/dt along the closed loop; the
/// shaping vector a never appears.
inline double power_balance(const State& s, const ControlInput& u, const BodyParams& /*b*/) {
  return s.v.dot(u.f_prime) + s.w.dot(u.tau_prime);
}

/// Residual of the inertia-shaping matching condition
///   hat(w) a = hat(w) J w - J J_d^{-1} hat(w) J_d w + (J J_d^{-1} - I) tau'.
/// Zero iff J dw = -w x (J w - a) + tau' coincides with the dynamics of a
/// body of inertia J_d driven by tau'.
inline Vec3 matching_residual(const Vec3& w, const Vec3& a, const Vec3& tau_prime, const Mat3& J, const Mat3& J_d) {
  const Mat3 j_jd_inv = J * J_d.inverse();
  const Vec3 rhs = hat(w) * J * w - j_jd_inv * hat(w) * J_d * w + (j_jd_inv - Mat3::Identity()) * tau_prime;
  return hat(w) * a - rhs;
}

}  // namespace lossless
