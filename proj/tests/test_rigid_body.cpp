#include <random>

#include <gtest/gtest.h>

#include "lossless/rigid_body.hpp"

using namespace lossless;

namespace {

Vec3 random_vec(std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  return {n(rng), n(rng), n(rng)};
}

Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized().toRotationMatrix();
}

const BodyParams kBody = make_body(1.0, Vec3(1.5, 1.5, 0.5));

}  // namespace

TEST(BodyParams, Validation) {
  EXPECT_THROW(make_body(0.0, Vec3(1, 1, 1)), InvalidArgument);
  EXPECT_THROW(make_body(-1.0, Vec3(1, 1, 1)), InvalidArgument);
  EXPECT_THROW(make_body(1.0, Vec3(1, 0, 1)), InvalidArgument);
  EXPECT_THROW(make_body(1.0, Vec3(1, 1, 1), -9.81), InvalidArgument);
  BodyParams b = kBody;
  b.inertia(0, 1) = b.inertia(1, 0) = 0.1;
  EXPECT_THROW(b.validate(), InvalidArgument);
  EXPECT_EQ(kBody.inertia_diagonal(), Vec3(1.5, 1.5, 0.5));
}

TEST(KineticEnergy, HandComputed) {
  State s;
  s.v = Vec3(0.0, 0.1, 0.0);
  s.w = Vec3(0.15, -0.2, 0.25);
  // 0.5 * 0.01 + 0.5 * (1.5 * 0.0225 + 1.5 * 0.04 + 0.5 * 0.0625)
  EXPECT_NEAR(kinetic_energy(s, kBody), 0.0675, 1e-15);
}

TEST(GravityCompensation, LeavesResidualForceOnly) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const Mat3 R = random_rotation(rng);
    const Vec3 f_prime = random_vec(rng, 2.0);
    const Vec3 f_body = gravity_comp_body_force<double>(kBody, R, f_prime);
    const Vec3 net = R * f_body - Vec3(0, 0, kBody.mass * kBody.gravity);
    EXPECT_LE((net - f_prime).norm(), 1e-13);
  }
}

// Principal-axis Euler equations written out component by component.
TEST(ClosedLoopDerivative, ReducesToEulerEquations) {
  std::mt19937_64 rng(12);
  const BodyParams b = make_body(2.0, Vec3(1.2, 0.7, 2.3));
  const double J1 = 1.2;
  const double J2 = 0.7;
  const double J3 = 2.3;
  for (int i = 0; i < 200; ++i) {
    State s;
    s.R = random_rotation(rng);
    s.w = random_vec(rng, 1.0);
    s.v = random_vec(rng, 1.0);
    ControlInput u;
    u.tau_prime = random_vec(rng, 1.0);
    u.f_prime = random_vec(rng, 1.0);
    const auto d = closed_loop_derivative(s, u, b);
    const Vec3& w = s.w;
    const Vec3& t = u.tau_prime;
    const Vec3 expected((t(0) + (J2 - J3) * w(1) * w(2)) / J1, (t(1) + (J3 - J1) * w(2) * w(0)) / J2,
                        (t(2) + (J1 - J2) * w(0) * w(1)) / J3);
    EXPECT_LE((d.dw - expected).norm(), 1e-13);
    EXPECT_LE((d.dv - u.f_prime / 2.0).norm(), 1e-15);
    EXPECT_EQ(d.dp, s.v);
    EXPECT_LE((d.dR - s.R * hat<double>(s.w)).norm(), 1e-15);
  }
}

TEST(ClosedLoopDerivative, ShapingTermIsGyroscopic) {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 100; ++i) {
    State s;
    s.w = random_vec(rng, 1.0);
    ControlInput u0;
    ControlInput u1;
    u1.a = random_vec(rng, 3.0);
    const Vec3 diff = closed_loop_derivative(s, u1, kBody).dw - closed_loop_derivative(s, u0, kBody).dw;
    EXPECT_LE((apply_inertia<double>(kBody, diff) - s.w.cross(u1.a)).norm(), 1e-13);
  }
}

// dK/dt by central differences along the flow equals v.f' + w.tau',
// whatever a is.
TEST(PowerBalance, MatchesFiniteDifferenceOfKineticEnergy) {
  std::mt19937_64 rng(14);
  const double h = 1e-6;
  for (int i = 0; i < 200; ++i) {
    State s;
    s.R = random_rotation(rng);
    s.w = random_vec(rng, 1.0);
    s.v = random_vec(rng, 1.0);
    ControlInput u;
    u.f_prime = random_vec(rng, 1.0);
    u.tau_prime = random_vec(rng, 1.0);
    u.a = random_vec(rng, 5.0);
    const auto d = closed_loop_derivative(s, u, kBody);
    State sp = s;
    State sm = s;
    sp.v += h * d.dv;
    sp.w += h * d.dw;
    sm.v -= h * d.dv;
    sm.w -= h * d.dw;
    const double dK = (kinetic_energy(sp, kBody) - kinetic_energy(sm, kBody)) / (2.0 * h);
    EXPECT_NEAR(dK, power_balance(s, u, kBody), 1e-8 * (1.0 + std::abs(dK)));
  }
}

TEST(PowerBalance, ZeroWithoutNominalInputs) {
  std::mt19937_64 rng(15);
  for (int i = 0; i < 100; ++i) {
    State s;
    s.w = random_vec(rng, 1.0);
    s.v = random_vec(rng, 1.0);
    ControlInput u;
    u.a = random_vec(rng, 5.0);
    const auto d = closed_loop_derivative(s, u, kBody);
    EXPECT_NEAR(kBody.mass * s.v.dot(d.dv) + s.w.dot(apply_inertia<double>(kBody, d.dw)), 0.0, 1e-14);
  }
}

TEST(Potential, ZeroAtSetPointAndNonNegative) {
  std::mt19937_64 rng(16);
  const Mat3 R_d = rot_y(0.75 * M_PI);
  EXPECT_NEAR(potential_energy(R_d, Mat3::Identity(), R_d), 0.0, 1e-15);
  // U = 3 - tr(R_d^T R) for G = I; at R = I that is 3 - (1 + 2 cos(3pi/4)) = 2 + sqrt(2).
  EXPECT_NEAR(potential_energy(Mat3::Identity(), Mat3::Identity(), R_d), 2.0 + std::sqrt(2.0), 1e-14);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 g = random_vec(rng, 1.0).cwiseAbs();
    const Mat3 Q = random_rotation(rng);
    const Mat3 G = Q * g.asDiagonal() * Q.transpose();
    State s;
    s.R = random_rotation(rng);
    s.w = random_vec(rng, 1.0);
    EXPECT_GE(lyapunov(s, kBody, 0.5 * (G + G.transpose()), random_rotation(rng)), -1e-12);
  }
}

TEST(Potential, RejectsAsymmetricGain) {
  Mat3 G = Mat3::Identity();
  G(0, 1) = 0.5;
  EXPECT_THROW(potential_energy(Mat3::Identity(), G, Mat3::Identity()), AsymmetricGain);
}

TEST(MatchingResidual, ZeroForEqualInertiaAndNoShaping) {
  std::mt19937_64 rng(17);
  const Vec3 w = random_vec(rng, 1.0);
  const Vec3 tau = random_vec(rng, 1.0);
  EXPECT_LE(matching_residual(w, Vec3::Zero(), tau, kBody.inertia, kBody.inertia).norm(), 1e-15);
  EXPECT_LE(matching_residual(w, 2.5 * w, tau, kBody.inertia, kBody.inertia).norm(), 1e-14);
}

// hat(w) has rank two, so min_a |hat(w) a - rhs| is the component of rhs
// along w. A least-squares solve is the oracle for that minimum.
TEST(MatchingResidual, GenericShapingIsUnreachable) {
  std::mt19937_64 rng(18);
  std::uniform_real_distribution<double> u(0.3, 3.0);
  for (int i = 0; i < 200; ++i) {
    const Mat3 J = Vec3(u(rng), u(rng), u(rng)).asDiagonal();
    const Mat3 J_d = Vec3(u(rng), u(rng), u(rng)).asDiagonal();
    const Vec3 w = random_vec(rng, 1.0);
    const Vec3 tau = random_vec(rng, 1.0);
    const Vec3 rhs = -matching_residual(w, Vec3::Zero(), tau, J, J_d);
    const Mat3 W = hat<double>(w);
    const Vec3 a_ls = W.completeOrthogonalDecomposition().solve(rhs);
    const double min_residual = matching_residual(w, a_ls, tau, J, J_d).norm();
    EXPECT_GT(min_residual, 0.0);
    EXPECT_NEAR(min_residual, std::abs(w.dot(rhs)) / w.norm(), 1e-10);
  }
}
