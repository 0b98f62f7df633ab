#pragma once

// Randomized invariant suites behind `lossless check`. Every suite is driven
// by a seeded std::mt19937_64, so a failing run can be replayed by seed.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lossless/controllers.hpp"
#include "lossless/integrators.hpp"
#include "lossless/ocp.hpp"
#include "lossless/so3.hpp"

namespace lossless::checks {

inline constexpr std::uint64_t kDefaultSeed = 20240517;

struct PropertyResult {
  std::string suite;
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double bound = 0.0;
};

inline std::string format(const PropertyResult& r) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << (r.passed ? "PASS " : "FAIL ") << r.suite << '/' << r.name << "  measured=" << r.measured
     << " bound=" << r.bound;
  return os.str();
}

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  Vec3 vec(double scale) {
    std::normal_distribution<double> n(0.0, scale);
    return {n(rng_), n(rng_), n(rng_)};
  }
  /// Uniform random rotation from a normalized Gaussian quaternion.
  Mat3 rotation() {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Quaterniond q(n(rng_), n(rng_), n(rng_), n(rng_));
    q.normalize();
    return q.toRotationMatrix();
  }

 private:
  std::mt19937_64 rng_;
};

/// Lossless torque orthogonality, Cayley orthogonality, hat/vee round trip and
/// Cayley-step SO(3) preservation.
inline std::vector<PropertyResult> so3_suite(std::uint64_t seed, int samples = 100000) {
  Sampler rs(seed);
  double triple = 0.0;
  double cay_defect = 0.0;
  double roundtrip = 0.0;
  for (int i = 0; i < samples; ++i) {
    const Vec3 w = rs.vec(std::pow(10.0, rs.uniform(-3.0, 2.0)));
    const Vec3 a = rs.vec(std::pow(10.0, rs.uniform(-3.0, 2.0)));
    const double scale = w.squaredNorm() * a.norm();
    if (scale > 0.0) {
      triple = std::max(triple, std::abs(w.dot(lossless_torque<double>(w, a))) / scale);
    }
    cay_defect = std::max(cay_defect, orthogonality_defect(cay<double>(rs.vec(rs.uniform(0.01, 3.0)))));
    const Vec3 x = rs.vec(10.0);
    roundtrip = std::max(roundtrip, (vee(hat<double>(x)) - x).cwiseAbs().maxCoeff() / std::max(1.0, x.norm()));
  }
  const BodyParams b = make_body(1.0, Vec3(1.5, 1.5, 0.5));
  State s;
  s.R = rs.rotation();
  s.w = rs.vec(0.5);
  ControlInput u;
  u.a = rs.vec(2.0);
  for (int k = 0; k < 25000; ++k) {
    s = closed_loop_step<double>(s, u, b, StepSize(0.002));
  }
  return {{"so3", "triple_product", triple <= 1e-12, triple, 1e-12},
          {"so3", "cayley_orthogonality", cay_defect <= 1e-12, cay_defect, 1e-12},
          {"so3", "hat_vee_roundtrip", roundtrip <= 1e-15, roundtrip, 1e-15},
          {"so3", "lie_newmark_25000_steps", orthogonality_defect(s.R) <= 1e-9, orthogonality_defect(s.R), 1e-9}};
}

/// Short closed-loop runs. K drift with a random held a (no nominal torque)
/// must be pure discretization error: halving T halves it, since the
/// rotational stepper is first order. V monotonicity with the nominal
/// controller plus the same held a.
inline std::vector<PropertyResult> energy_suite(std::uint64_t seed, int runs = 20) {
  Sampler rs(seed);
  const BodyParams b = make_body(1.0, Vec3(1.5, 1.5, 0.5));
  const double horizon = 5.0;
  double min_ratio = std::numeric_limits<double>::infinity();
  double v_increase = 0.0;
  for (int r = 0; r < runs; ++r) {
    State s0;
    s0.R = rs.rotation();
    s0.w = rs.vec(0.3);
    s0.v = rs.vec(0.1);
    const Vec3 a = rs.vec(2.0);
    auto drift = [&](double T) {
      const auto run = simulate(
          s0, [&](long, const State&) { ControlInput u; u.a = a; return u; }, b, StepSize(T),
          std::lround(horizon / T));
      const double K0 = kinetic_energy(run.front().state, b);
      double d = 0.0;
      for (const auto& rec : run) d = std::max(d, std::abs(kinetic_energy(rec.state, b) - K0) / K0);
      return d;
    };
    min_ratio = std::min(min_ratio, drift(2e-3) / drift(1e-3));

    const SetPoint sp{Rotation(rs.rotation())};
    AttitudeGains gains;
    const auto ctl = simulate(
        s0,
        [&](long k, const State& s) { return composite_control(k, s, sp, gains, a, ControlMode::combined()); }, b,
        StepSize(2e-3), std::lround(horizon / 2e-3));
    const double V0 = lyapunov(ctl.front().state, b, gains.G, sp.R_d.matrix());
    for (std::size_t i = 1; i < ctl.size(); ++i) {
      const double dv = lyapunov(ctl[i].state, b, gains.G, sp.R_d.matrix()) -
                        lyapunov(ctl[i - 1].state, b, gains.G, sp.R_d.matrix());
      v_increase = std::max(v_increase, dv / V0);
    }
  }
  return {{"energy", "kinetic_drift_halving_ratio_min", min_ratio >= 1.8, min_ratio, 1.8},
          {"energy", "lyapunov_monotone_5s", v_increase <= 1e-6, v_increase, 1e-6}};
}

/// Relative error between forward-mode derivatives and finite differences of
/// the OCP objective and constraints at x: for the objective gradient and for
/// each constraint row, |fd - ad|_inf / |ad|_inf, maximized. The differences
/// use the fourth-order five-point stencil with step h * max(1, |x_i|).
inline double gradient_relative_error(const OcpProblem& prob, const Eigen::VectorXd& x, double h = 1e-3) {
  const nlp::Evaluation ad = evaluate_ocp(prob, x, true);
  const Eigen::Index n = x.size();
  Eigen::VectorXd fd_f(n);
  Eigen::MatrixXd fd_g(ad.g.size(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double step = h * std::max(1.0, std::abs(x(i)));
    auto at = [&](double offset) {
      Eigen::VectorXd xs = x;
      xs(i) += offset;
      return evaluate_ocp(prob, xs, false);
    };
    const nlp::Evaluation p2 = at(2.0 * step);
    const nlp::Evaluation p1 = at(step);
    const nlp::Evaluation m1 = at(-step);
    const nlp::Evaluation m2 = at(-2.0 * step);
    fd_f(i) = (-p2.f + 8.0 * p1.f - 8.0 * m1.f + m2.f) / (12.0 * step);
    fd_g.col(i) = (-p2.g + 8.0 * p1.g - 8.0 * m1.g + m2.g) / (12.0 * step);
  }
  const double tiny = 1e-300;
  double err = (fd_f - ad.grad_f).lpNorm<Eigen::Infinity>() / std::max(ad.grad_f.lpNorm<Eigen::Infinity>(), tiny);
  for (Eigen::Index r = 0; r < ad.g.size(); ++r) {
    const Eigen::VectorXd row = ad.jac_g.row(r).transpose();
    const double scale = row.lpNorm<Eigen::Infinity>();
    if (scale > 0.0) {
      err = std::max(err, (fd_g.row(r).transpose() - row).lpNorm<Eigen::Infinity>() / scale);
    }
  }
  return err;
}

/// A random instance of the slit problem near the approach phase.
inline OcpProblem random_problem(Sampler& rs, bool with_nominal) {
  OcpProblem prob;
  prob.body = make_body(1.0, Vec3(1.5, 1.5, 0.5));
  prob.slit.p_star = Vec3(0.0, 2.5, 0.0);
  prob.initial.p = Vec3(rs.uniform(-0.2, 0.2), rs.uniform(0.5, 2.4), 0.5);
  prob.initial.v = Vec3(0.0, 0.1, 0.0);
  prob.initial.R = rs.rotation();
  prob.initial.w = rs.vec(0.3);
  if (with_nominal) {
    prob.nominal = NominalModel{AttitudeGains{}, SetPoint{Rotation(rot_y(0.75 * M_PI))}};
  }
  return prob;
}

inline std::vector<PropertyResult> gradients_suite(std::uint64_t seed, int points = 100) {
  Sampler rs(seed);
  double worst = 0.0;
  for (int i = 0; i < points; ++i) {
    const OcpProblem prob = random_problem(rs, i % 2 == 1);
    Eigen::VectorXd x(3 * prob.horizon);
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      x(j) = rs.uniform(-prob.a_bound(j % 3), prob.a_bound(j % 3));
    }
    worst = std::max(worst, gradient_relative_error(prob, x));
  }
  return {{"gradients", "forward_mode_vs_central_difference", worst <= 1e-5, worst, 1e-5}};
}

/// Runs "so3", "energy", "gradients" or "all".
inline std::vector<PropertyResult> run_suite(const std::string& suite, std::uint64_t seed) {
  std::vector<PropertyResult> out;
  auto append = [&](std::vector<PropertyResult> r) { out.insert(out.end(), r.begin(), r.end()); };
  if (suite == "so3" || suite == "all") append(so3_suite(seed));
  if (suite == "energy" || suite == "all") append(energy_suite(seed));
  if (suite == "gradients" || suite == "all") append(gradients_suite(seed));
  if (out.empty()) {
    throw InvalidArgument("unknown suite '" + suite + "' (expected so3, energy, gradients or all)");
  }
  return out;
}

}  // namespace lossless::checks
