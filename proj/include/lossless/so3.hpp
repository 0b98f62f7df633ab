#pragma once

// Rotation-group primitives on 3x3 matrices. Everything here is templated on
// the scalar type so the same code runs on doubles and on forward-mode
// autodiff scalars inside the optimizer.

#include <cmath>
#include <type_traits>

#include <Eigen/Dense>

#include "lossless/errors.hpp"

namespace lossless {

template <typename Scalar>
using Vec3T = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3T = Eigen::Matrix<Scalar, 3, 3>;

using Vec3 = Vec3T<double>;
using Mat3 = Mat3T<double>;

/// Tolerance on ||R^T R - I||_F and |det R - 1| accepted for a rotation.
inline constexpr double kRotationTolerance = 1e-9;
/// Symmetry tolerance used by vee().
inline constexpr double kSkewTolerance = 1e-9;

inline Vec3 unit_x() { return Vec3::UnitX(); }
inline Vec3 unit_y() { return Vec3::UnitY(); }
inline Vec3 unit_z() { return Vec3::UnitZ(); }

/// Skew-symmetric matrix such that hat(w) * a == w.cross(a).
///
///            [  0  -wz   wy ]
///   hat(w) = [  wz   0  -wx ]
///            [ -wy  wx    0 ]
template <typename Scalar>
Mat3T<Scalar> hat(const Vec3T<Scalar>& w) {
  Mat3T<Scalar> m;
  m << Scalar(0), -w(2), w(1),
       w(2), Scalar(0), -w(0),
       -w(1), w(0), Scalar(0);
  return m;
}

/// Inverse of hat() without any symmetry check.
template <typename Scalar>
Vec3T<Scalar> vee_unchecked(const Mat3T<Scalar>& m) {
  return Vec3T<Scalar>(m(2, 1), m(0, 2), m(1, 0));
}

/// Inverse of hat(). Throws NotSkew when m + m^T exceeds kSkewTolerance
/// (checked for floating-point scalars only).
template <typename Scalar>
Vec3T<Scalar> vee(const Mat3T<Scalar>& m) {
  if constexpr (std::is_floating_point_v<Scalar>) {
    const double asym = (m + m.transpose()).cwiseAbs().maxCoeff();
    if (!(asym <= kSkewTolerance)) {
      throw NotSkew("vee: matrix is not skew-symmetric (max |M + M^T| = " + std::to_string(asym) + ")");
    }
  }
  return vee_unchecked(m);
}

/// Anti-symmetric part (A - A^T) / 2.
template <typename Scalar>
Mat3T<Scalar> sk(const Mat3T<Scalar>& a) {
  return (a - a.transpose()) * Scalar(0.5);
}

/// Cayley retraction cay(x) = (I + x^/2)(I - x^/2)^{-1}.
///
/// Evaluated through the exact closed-form inverse of the 3x3 system, which
/// for a skew argument collapses to I + 4/(4 + |x|^2) (x^ + x^ x^ / 2). The
/// denominator never vanishes, so there is no small-angle branch.
template <typename Scalar>
Mat3T<Scalar> cay(const Vec3T<Scalar>& x) {
  const Mat3T<Scalar> xh = hat(x);
  const Scalar scale = Scalar(4) / (Scalar(4) + x.squaredNorm());
  return Mat3T<Scalar>::Identity() + scale * (xh + Scalar(0.5) * (xh * xh));
}

inline Mat3 rot_x(double angle) {
  return Eigen::AngleAxisd(angle, Vec3::UnitX()).toRotationMatrix();
}
inline Mat3 rot_y(double angle) {
  return Eigen::AngleAxisd(angle, Vec3::UnitY()).toRotationMatrix();
}
inline Mat3 rot_z(double angle) {
  return Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix();
}

/// ||R^T R - I||_F.
inline double orthogonality_defect(const Mat3& r) {
  return (r.transpose() * r - Mat3::Identity()).norm();
}

inline bool is_rotation(const Mat3& r, double tol = kRotationTolerance) {
  return r.allFinite() && orthogonality_defect(r) <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

/// Nearest rotation in the Frobenius sense (orthogonal polar factor), found
/// with the scaled Newton iteration X <- (g X + X^{-T} / g) / 2.
/// Returns the input unchanged when it is already a rotation.
inline Mat3 project_to_so3(const Mat3& m) {
  if (!m.allFinite()) {
    throw Degenerate("project_to_so3: non-finite input");
  }
  const double det = m.determinant();
  if (!(det > 0.0)) {
    throw Degenerate("project_to_so3: det(M) = " + std::to_string(det) + " <= 0");
  }
  if (orthogonality_defect(m) == 0.0 && det == 1.0) {
    return m;
  }
  Mat3 x = m;
  for (int it = 0; it < 100; ++it) {
    const Mat3 x_inv_t = x.inverse().transpose();
    // Determinant scaling speeds up the first iterations for badly scaled inputs.
    const double gamma = std::pow(std::abs(x_inv_t.determinant() / x.determinant()), 1.0 / 6.0);
    const Mat3 next = 0.5 * (gamma * x + x_inv_t / gamma);
    const double change = (next - x).norm();
    x = next;
    if (change <= 1e-15 * x.norm()) {
      break;
    }
  }
  return x;
}

/// A 3x3 matrix known to lie on SO(3) within kRotationTolerance.
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  /// Validates m; throws Degenerate when it is not a rotation.
  explicit Rotation(const Mat3& m) : m_(m) {
    if (!is_rotation(m)) {
      throw Degenerate("matrix is not in SO(3): ||R^T R - I||_F = " +
                       std::to_string(orthogonality_defect(m)) + ", det = " + std::to_string(m.determinant()));
    }
  }

  static Rotation identity() { return Rotation(); }

  [[nodiscard]] const Mat3& matrix() const { return m_; }
  operator const Mat3&() const { return m_; }  // NOLINT(google-explicit-constructor)

  Rotation operator*(const Rotation& other) const { return Rotation(m_ * other.m_); }
  [[nodiscard]] Rotation transpose() const { return Rotation(m_.transpose()); }

 private:
  Mat3 m_;
};

}  // namespace lossless
