// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <string>

#include "lossless/checks.hpp"
#include "lossless/scenario.hpp"
#include "ocp_oracles.hpp"

using namespace lossless;

namespace {

int failures = 0;

void report(const std::string& id, bool pass, const std::string& detail) {
  std::printf("%s criterion %-3s %s\n", pass ? "PASS" : "FAIL", id.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

std::string scenario_path(const std::string& name) { return std::string(LOSSLESS_SCENARIO_DIR) + "/" + name + ".json"; }

struct Run {
  ScenarioConfig cfg;
  Trace trace;
  EnergyReport rep;
  double seconds = 0.0;
};

Run run(const std::string& name, const std::vector<std::string>& overrides = {}) {
  Run r;
  r.cfg = load_scenario_file(scenario_path(name), overrides);
  const auto start = std::chrono::steady_clock::now();
  r.trace = run_scenario(r.cfg);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.rep = energy_report(r.trace, r.cfg.slit, 2.0);
  return r;
}

std::string csv(const Trace& t) {
  std::ostringstream os;
  write_trace(t, os, TraceFormat::kCsv);
  return os.str();
}

bool slit_passed(const EnergyReport& rep) {
  return rep.eps_at_d_min < rep.eps_bound_at_d_min && rep.max_constraint_g_before_closest < 0.0;
}

std::string slit_detail(const char* mode, const EnergyReport& rep) {
  return std::string(mode) + fmt(": eps(d_min)=%.4e bound=%.4e max g[2 s before]=%.4e", rep.eps_at_d_min,
                                 rep.eps_bound_at_d_min, rep.max_constraint_g_before_closest);
}

}  // namespace

int main() {
  // 1: scenario fidelity and runtime.
  const ScenarioConfig c = load_scenario_file(scenario_path("paper-fig4"));
  const bool snapshot =
      c.body.mass == 1.0 && c.body.inertia == Mat3(Vec3(1.5, 1.5, 0.5).asDiagonal()) &&
      c.initial.p == Vec3(0, 0, 0.5) && c.initial.v == Vec3(0, 0.1, 0) && c.initial.w == Vec3(0.15, -0.2, 0.25) &&
      c.initial.R == Mat3::Identity() && c.slit.p_star == Vec3(0, 2.5, 0) &&
      c.slit.R_star.matrix() == Mat3::Identity() && c.slit.eps1 == 0.005 && c.slit.eps2 == 0.1 &&
      c.mpc.T_mpc == 0.1 && c.mpc.horizon == 10 && c.n_steps == 25000 && c.T_sim == 0.002 &&
      (c.set_point.R_d.matrix() - rot_y(0.75 * M_PI)).norm() <= 1e-15 && c.mode == ScenarioMode::kCombined;

  const Run fig1 = run("paper-fig1");
  const Run fig2 = run("paper-fig2");
  const Run fig3 = run("paper-fig3");
  const Run fig4 = run("paper-fig4");
  report("1", snapshot && fig4.seconds <= 60.0,
         std::string("config snapshot ") + (snapshot ? "matches" : "MISMATCH") +
             fmt("; paper-fig4 runtime %.1f s (limit 60 s)", fig4.seconds));

  // 2: slit passage with the controller, and failure without it.
  const bool free_fails = fig1.rep.eps_at_d_min > fig1.rep.eps_bound_at_d_min;
  report("2", slit_passed(fig2.rep) && slit_passed(fig4.rep) && free_fails,
         slit_detail("lossless_only", fig2.rep) + "; " + slit_detail("combined", fig4.rep) + "; " +
             slit_detail("free (must violate)", fig1.rep));

  // 3: kinetic energy drift and its step-size scaling.
  const Run fig2_half = run("paper-fig2", {"simulation.step=0.001", "simulation.steps=50000"});
  const double ratio = fig2.rep.K_drift_max / fig2_half.rep.K_drift_max;
  report("3", fig2.rep.K_drift_max <= 1e-4 && ratio >= 3.5 && ratio <= 4.5,
         fmt("max |K-K0|/K0 = %.3e (limit 1e-4); at T/2 %.3e, ratio %.2f (expected ~4)", fig2.rep.K_drift_max,
             fig2_half.rep.K_drift_max, ratio));

  // 4: Lyapunov monotonicity with identical gains.
  const bool same_gains = fig3.cfg.gains.G == fig4.cfg.gains.G && fig3.cfg.gains.k_D == fig4.cfg.gains.k_D;
  report("4",
         same_gains && fig3.rep.max_V_increase <= 1e-6 * fig3.rep.V0 &&
             fig4.rep.max_V_increase <= 1e-6 * fig4.rep.V0,
         fmt("max dV/V0: nominal_only %.3e, combined %.3e (limit 1e-6); same gains: ",
             fig3.rep.max_V_increase_relative, fig4.rep.max_V_increase_relative) +
             (same_gains ? "yes" : "no"));

  // 5: stabilization in nominal_only mode.
  const auto& last = fig3.trace.records.back();
  const double r_err = (last.R - fig3.cfg.set_point.R_d.matrix()).norm();
  const double w_err = last.w.norm();
  report("5", r_err <= 1e-2 && w_err <= 1e-3,
         fmt("||R(50)-R_d||_F = %.3e (limit 1e-2), |w(50)| = %.3e rad/s (limit 1e-3)", r_err, w_err));

  // 6: triple product.
  {
    std::mt19937_64 rng(checks::kDefaultSeed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> mag(-3.0, 2.0);
    double worst = 0.0;
    for (int i = 0; i < 100000; ++i) {
      const Vec3 w = Vec3(n(rng), n(rng), n(rng)) * std::pow(10.0, mag(rng));
      const Vec3 a = Vec3(n(rng), n(rng), n(rng)) * std::pow(10.0, mag(rng));
      worst = std::max(worst, std::abs(w.dot(w.cross(a))) / (w.squaredNorm() * a.norm()));
    }
    report("6", worst <= 1e-12, fmt("max |w.(w x a)| / (|w|^2 |a|) = %.3e over 1e5 pairs (limit 1e-12)", worst));
  }

  // 7: SO(3) preservation over the full lossless run and a stand-alone stepper run.
  {
    State s = c.initial;
    ControlInput u;
    u.a = Vec3(2.0, -3.0, 1.0);
    for (int k = 0; k < 25000; ++k) s = closed_loop_step<double>(s, u, c.body, StepSize(0.002));
    const double d_step = orthogonality_defect(s.R);
    const double d_run = orthogonality_defect(fig2.trace.records.back().R);
    report("7", d_step <= 1e-9 && d_run <= 1e-9,
           fmt("||R^T R - I||_F after 25000 steps: held a %.3e, lossless_only run %.3e (limit 1e-9)", d_step, d_run));
  }

  // 8a: gradients.
  const auto grad = checks::gradients_suite(checks::kDefaultSeed, 100);
  report("8a", grad.front().passed, fmt("max relative FD error over 100 points = %.3e (limit 1e-5)", grad.front().measured));

  // 8b: H = 2 grid oracle on an instance with an active constraint.
  {
    const OcpProblem p = oracle::active_h2_instance();
    const double g_zero = evaluate_ocp(p, Eigen::VectorXd::Zero(6), false).g.maxCoeff();
    const auto grid = oracle::grid_search_h2(p, 21);
    const auto sol = solve_ocp(p);
    report("8b", std::isfinite(grid.best) && sol.max_violation <= 1e-6 && sol.cost <= grid.best + 1e-3,
           fmt("solver cost %.6e (violation %.1e) vs 21^6 grid best %.6e; g(a=0) = %.3e", sol.cost,
               sol.max_violation, grid.best, g_zero));
  }

  // 8c: zero-input optimality from a feasible cold state.
  {
    OcpProblem p = c.ocp_problem();
    const auto sol = solve_ocp(p);
    report("8c", sol.cost <= 1e-10 && sol.max_violation <= 1e-6,
           fmt("cost %.3e (limit 1e-10), violation %.1e", sol.cost, sol.max_violation));
  }

  // 9: determinism of every shipped scenario.
  {
    bool same = true;
    std::string detail;
    for (const Run* r : {&fig1, &fig2, &fig3, &fig4}) {
      const bool eq = csv(r->trace) == csv(run_scenario(r->cfg));
      same = same && eq;
      detail += r->cfg.name + (eq ? " identical; " : " DIFFERS; ");
    }
    report("9", same, detail);
  }

  std::printf("%d criterion line(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
