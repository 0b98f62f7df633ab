#pragma once

#include <string>

#include "lossless/rigid_body.hpp"
#include "lossless/so3.hpp"

namespace lossless {

/// Co-stiffness G (symmetric PSD) and damping k_D of the nominal controller.
struct AttitudeGains {
  Mat3 G = Mat3::Identity();
  double k_D = 1.5;

  void validate() const {
    require_symmetric(G);
    if (!G.allFinite()) {
      throw InvalidArgument("gains.G must be finite");
    }
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(0.5 * (G + G.transpose()));
    if (eig.eigenvalues().minCoeff() < -1e-12) {
      throw InvalidArgument("gains.G must be positive semidefinite");
    }
    if (!(k_D > 0.0) || !std::isfinite(k_D)) {
      throw InvalidArgument("gains.k_D must be positive");
    }
  }
};

struct SetPoint {
  Rotation R_d;
};

/// tau' = vee(-2 sk(G R_d^T R)) - k_D w.
///
/// With U = -tr(G(R_d^T R - I)) this gives dV/dt = -k_D |w|^2 along the
/// closed loop.
template <typename Scalar>
Vec3T<Scalar> nominal_attitude_torque(const Mat3T<Scalar>& R, const Vec3T<Scalar>& w, const SetPoint& sp,
                                      const AttitudeGains& gains) {
  const Mat3T<Scalar> error = (gains.G * sp.R_d.matrix().transpose()).template cast<Scalar>() * R;
  return Scalar(-2) * vee_unchecked<Scalar>(sk<Scalar>(error)) - Scalar(gains.k_D) * w;
}

/// Gyroscopic shaping torque w x a. Orthogonal to w, so it does no work.
template <typename Scalar>
Vec3T<Scalar> lossless_torque(const Vec3T<Scalar>& w, const Vec3T<Scalar>& a) {
  return w.cross(a);
}

/// Which torque channels are switched on.
struct ControlMode {
  bool nominal = false;
  bool lossless = false;

  static ControlMode free() { return {false, false}; }
  static ControlMode lossless_only() { return {false, true}; }
  static ControlMode nominal_only() { return {true, false}; }
  static ControlMode combined() { return {true, true}; }

  friend bool operator==(const ControlMode&, const ControlMode&) = default;
};

/// Assembles the input for one simulation step. f' is always zero; tau' comes
/// from the nominal controller when enabled; a is the held shaping vector
/// when the lossless channel is enabled and zero otherwise. The shaping torque
/// itself, w x a, is formed by the stepper with the current w.
inline ControlInput composite_control(long /*k*/, const State& s, const SetPoint& sp, const AttitudeGains& gains,
                                      const Vec3& a_hold, ControlMode mode) {
  ControlInput u;
  if (mode.nominal) {
    u.tau_prime = nominal_attitude_torque<double>(s.R, s.w, sp, gains);
  }
  if (mode.lossless) {
    u.a = a_hold;
  }
  return u;
}

}  // namespace lossless
