#include <random>
#include <stdexcept>

#include <gtest/gtest.h>

#include "lossless/integrators.hpp"

using namespace lossless;

namespace {

const BodyParams kBody = make_body(1.0, Vec3(1.5, 1.5, 0.5));

State scenario_state() {
  State s;
  s.p = Vec3(0.0, 0.0, 0.5);
  s.v = Vec3(0.0, 0.1, 0.0);
  s.w = Vec3(0.15, -0.2, 0.25);
  return s;
}

ControlLaw hold(const ControlInput& u) {
  return [u](long, const State&) { return u; };
}

double max_relative_kinetic_drift(double T, double horizon, const Vec3& a) {
  ControlInput u;
  u.a = a;
  const auto recs = simulate(scenario_state(), hold(u), kBody, StepSize(T), std::lround(horizon / T));
  const double K0 = kinetic_energy(recs.front().state, kBody);
  double drift = 0.0;
  for (const auto& r : recs) drift = std::max(drift, std::abs(kinetic_energy(r.state, kBody) - K0) / K0);
  return drift;
}

// Classical RK4 on the Euler equations with tau = 0, used as a reference
// for the angular velocity.
Vec3 rk4_free_omega(Vec3 w, double T, long steps) {
  const Vec3 J = kBody.inertia_diagonal();
  auto f = [&](const Vec3& x) { return Vec3((J.cwiseProduct(x)).cross(x).cwiseQuotient(J)); };
  for (long k = 0; k < steps; ++k) {
    const Vec3 k1 = f(w);
    const Vec3 k2 = f(w + 0.5 * T * k1);
    const Vec3 k3 = f(w + 0.5 * T * k2);
    const Vec3 k4 = f(w + T * k3);
    w += T / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return w;
}

}  // namespace

TEST(StepSize, Bounds) {
  EXPECT_THROW(StepSize(0.0), InvalidArgument);
  EXPECT_THROW(StepSize(-0.1), InvalidArgument);
  EXPECT_THROW(StepSize(1.5), InvalidArgument);
  EXPECT_DOUBLE_EQ(StepSize(1.0).seconds(), 1.0);
}

TEST(EulerTranslation, GravityCompensatedDrift) {
  State s = scenario_state();
  s.R = rot_x(0.3);
  ControlInput u;
  u.f_prime = Vec3(0.2, 0.0, -0.4);
  const State next = closed_loop_step<double>(s, u, kBody, StepSize(0.01));
  EXPECT_LE((next.p - (s.p + 0.01 * s.v)).norm(), 1e-15);
  EXPECT_LE((next.v - (s.v + 0.01 * u.f_prime)).norm(), 1e-15);
}

TEST(EulerTranslation, UncompensatedFallsUnderGravity) {
  const auto tr = euler_translation_step<double>(Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), Mat3::Identity(), kBody,
                                                 StepSize(0.1));
  EXPECT_NEAR(tr.v(2), -0.981, 1e-15);
  EXPECT_EQ(tr.p, Vec3::Zero());
}

TEST(LieNewmark, OneStepByHand) {
  const Vec3 w(0.15, -0.2, 0.25);
  const Vec3 tau(0.01, 0.02, -0.03);
  const double T = 0.05;
  const Vec3 J(1.5, 1.5, 0.5);
  auto accel = [&](const Vec3& x) { return Vec3((J.cwiseProduct(x).cross(x) + tau).cwiseQuotient(J)); };
  const Vec3 w_half = w + 0.5 * T * accel(w);
  const Vec3 w_next = w_half + 0.5 * T * accel(w_half);
  const Eigen::Quaterniond q(1.0, 0.5 * T * w_half(0), 0.5 * T * w_half(1), 0.5 * T * w_half(2));
  const auto out = lie_newmark_step<double>(rot_z(0.2), w, tau, kBody, StepSize(T));
  EXPECT_LE((out.w - w_next).norm(), 1e-15);
  EXPECT_LE((out.R - rot_z(0.2) * q.normalized().toRotationMatrix()).norm(), 1e-14);
}

// With a = J w the shaping torque cancels the gyroscopic term exactly, so
// the angular velocity is a fixed point of the stepper.
TEST(LieNewmark, ShapingCanFreezeOmega) {
  State s = scenario_state();
  ControlInput u;
  u.a = apply_inertia<double>(kBody, s.w);
  for (int k = 0; k < 100; ++k) s = closed_loop_step<double>(s, u, kBody, StepSize(0.002));
  EXPECT_EQ(s.w, scenario_state().w);
}

TEST(LieNewmark, PreservesOrthogonalityOver25000Steps) {
  State s = scenario_state();
  s.R = rot_y(0.4);
  ControlInput u;
  u.a = Vec3(1.0, -2.0, 0.5);
  for (int k = 0; k < 25000; ++k) s = closed_loop_step<double>(s, u, kBody, StepSize(0.002));
  EXPECT_LE(orthogonality_defect(s.R), 1e-9);
  EXPECT_NEAR(s.R.determinant(), 1.0, 1e-9);
}

// The scheme as printed is first order: halving T halves the error.
TEST(LieNewmark, FirstOrderOmegaError) {
  const Vec3 w0 = scenario_state().w;
  const double horizon = 1.0;
  const Vec3 reference = rk4_free_omega(w0, 1e-5, 100000);
  double previous = 0.0;
  for (double T : {4e-3, 2e-3, 1e-3}) {
    AttitudeState<double> st{Mat3::Identity(), w0};
    const long n = std::lround(horizon / T);
    for (long k = 0; k < n; ++k) st = lie_newmark_step<double>(st.R, st.w, Vec3::Zero(), kBody, StepSize(T));
    const double err = (st.w - reference).norm();
    if (previous > 0.0) {
      EXPECT_NEAR(previous / err, 2.0, 0.1) << "T = " << T;
    }
    previous = err;
  }
}

// Torque-free motion; the measured drift over 50 s is about 1.9e-3, 9.7e-4
// and 4.8e-4 for the three step sizes.
TEST(LieNewmark, KineticDriftHalvesWithStep) {
  const Vec3 a = Vec3::Zero();
  const double d1 = max_relative_kinetic_drift(4e-3, 50.0, a);
  const double d2 = max_relative_kinetic_drift(2e-3, 50.0, a);
  const double d3 = max_relative_kinetic_drift(1e-3, 50.0, a);
  EXPECT_NEAR(d1 / d2, 2.0, 0.15);
  EXPECT_NEAR(d2 / d3, 2.0, 0.15);
}

TEST(Simulate, RecordLayout) {
  ControlInput u;
  u.a = Vec3(0.1, 0.2, 0.3);
  u.tau_prime = Vec3(0.0, 0.0, 0.01);
  const auto recs = simulate(scenario_state(), hold(u), kBody, StepSize(0.01), 10);
  ASSERT_EQ(recs.size(), 11u);
  for (std::size_t k = 0; k < recs.size(); ++k) {
    EXPECT_EQ(recs[k].step, static_cast<long>(k));
    EXPECT_DOUBLE_EQ(recs[k].t, 0.01 * static_cast<double>(k));
    EXPECT_EQ(recs[k].input.a, u.a);
    EXPECT_LE((recs[k].tau_total - (recs[k].state.w.cross(u.a) + u.tau_prime)).norm(), 1e-16);
  }
  EXPECT_EQ(recs.front().state.w, scenario_state().w);
  EXPECT_EQ(recs[1].state.w, closed_loop_step<double>(scenario_state(), u, kBody, StepSize(0.01)).w);
}

TEST(Simulate, WrapsControlLawExceptions) {
  const ControlLaw bad = [](long k, const State&) -> ControlInput {
    if (k == 7) throw std::runtime_error("boom");
    return {};
  };
  try {
    simulate(scenario_state(), bad, kBody, StepSize(0.01), 20);
    FAIL() << "expected ControlLawFailure";
  } catch (const ControlLawFailure& e) {
    EXPECT_EQ(e.step(), 7);
  }
}

TEST(Simulate, RejectsBadArguments) {
  EXPECT_THROW(simulate(scenario_state(), hold({}), kBody, StepSize(0.01), 0), InvalidArgument);
  BodyParams bad = kBody;
  bad.mass = -1.0;
  EXPECT_THROW(simulate(scenario_state(), hold({}), bad, StepSize(0.01), 5), InvalidArgument);
}

TEST(Simulate, ReprojectionKeepsTrajectory) {
  ControlInput u;
  u.a = Vec3(1.0, 0.0, -1.0);
  const auto plain = simulate(scenario_state(), hold(u), kBody, StepSize(0.002), 2000);
  const auto projected = simulate(scenario_state(), hold(u), kBody, StepSize(0.002), 2000, SimulationOptions{true});
  EXPECT_LE((plain.back().state.R - projected.back().state.R).norm(), 1e-10);
  EXPECT_LE(orthogonality_defect(projected.back().state.R), 1e-14);
}
