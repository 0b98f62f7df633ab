// lossless: run scenarios, execute invariant suites, compare traces.
//
// Exit codes: 0 success, 1 check failure or compare out of tolerance,
// 2 configuration/input error, 3 runtime failure.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <future>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "lossless/checks.hpp"
#include "lossless/scenario.hpp"

namespace {

constexpr int kExitCheckFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

lossless::TraceFormat parse_format(const std::string& f) {
  return f == "jsonl" ? lossless::TraceFormat::kJsonl : lossless::TraceFormat::kCsv;
}

std::vector<std::string> split_fields(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Loads, runs and writes one scenario; the summary goes to `summary`.
int run_one(const std::string& scenario, const std::string& out, const std::string& format,
            const std::vector<std::string>& overrides, std::ostream& summary) {
  lossless::ScenarioConfig cfg;
  try {
    cfg = lossless::load_scenario_file(scenario, overrides);
  } catch (const lossless::Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  try {
    const auto start = std::chrono::steady_clock::now();
    const lossless::Trace trace = lossless::run_scenario(cfg);
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    lossless::write_trace(trace, out, parse_format(format));
    summary << "scenario " << cfg.name << " (" << lossless::to_string(cfg.mode) << "), " << cfg.n_steps
            << " steps in " << elapsed << " s -> " << out << '\n';
    for (const auto& d : cfg.defaults_used) {
      summary << "default " << d << '\n';
    }
    summary << lossless::format_report(lossless::energy_report(trace, cfg.slit));
  } catch (const lossless::Error& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lossless transient-shaping rigid-body controller: simulation and checks"};
  app.require_subcommand(1);

  std::string scenario;
  std::string out;
  std::string format = "csv";
  std::vector<std::string> overrides;
  auto* run = app.add_subcommand("run", "Simulate a scenario and write its trace");
  run->add_option("--scenario", scenario, "Scenario JSON file")->required();
  run->add_option("--out", out, "Trace output path")->required();
  run->add_option("--format", format, "Trace format")->check(CLI::IsMember({"csv", "jsonl"}));
  run->add_option("--override", overrides, "Dotted-path override, e.g. mpc.eps2=0.05");

  std::string suite = "all";
  std::uint64_t seed = lossless::checks::kDefaultSeed;
  auto* check = app.add_subcommand("check", "Run randomized invariant suites");
  check->add_option("--suite", suite, "Suite to run")->check(CLI::IsMember({"so3", "energy", "gradients", "all"}));
  check->add_option("--seed", seed, "Generator seed");

  std::string trace_a;
  std::string trace_b;
  std::string fields = "K,V,eps,d";
  double tol = -1.0;
  auto* compare = app.add_subcommand("compare", "Compare two traces on the same time grid");
  compare->add_option("trace_a", trace_a)->required();
  compare->add_option("trace_b", trace_b)->required();
  compare->add_option("--fields", fields, "Comma-separated trace fields");
  compare->add_option("--tol", tol, "Maximum allowed absolute deviation");

  std::vector<std::string> scenarios;
  std::string out_dir = ".";
  unsigned jobs = 0;
  auto* sweep = app.add_subcommand("sweep", "Run several scenarios, one output file each");
  sweep->add_option("scenarios", scenarios, "Scenario JSON files")->required();
  sweep->add_option("--out-dir", out_dir, "Directory for the traces");
  sweep->add_option("--format", format, "Trace format")->check(CLI::IsMember({"csv", "jsonl"}));
  sweep->add_option("--override", overrides, "Override applied to every scenario");
  sweep->add_option("--jobs", jobs, "Parallel runs (0: hardware concurrency)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return kExitConfig;
  }

  if (*run) {
    std::ostringstream summary;
    const int rc = run_one(scenario, out, format, overrides, summary);
    if (rc == 0) std::cout << summary.str();
    return rc;
  }

  if (*check) {
    std::cout << "seed " << seed << '\n';
    const auto results = lossless::checks::run_suite(suite, seed);
    bool ok = true;
    for (const auto& r : results) {
      std::cout << lossless::checks::format(r) << '\n';
      ok = ok && r.passed;
    }
    return ok ? 0 : kExitCheckFailed;
  }

  if (*compare) {
    lossless::TraceComparison cmp;
    try {
      cmp = lossless::compare_traces(lossless::read_trace(trace_a), lossless::read_trace(trace_b),
                                     split_fields(fields));
    } catch (const lossless::Error& e) {
      std::cerr << "compare error: " << e.what() << '\n';
      return kExitConfig;
    }
    bool within = true;
    std::cout << "field  max|a-b|  at t[s]\n";
    for (const auto& f : cmp.fields) {
      std::cout << f.field << "  " << f.max_abs << "  " << f.t_at_max << '\n';
      within = within && f.max_abs <= tol;
    }
    for (const auto* rep : {&cmp.a, &cmp.b}) {
      std::cout << (rep == &cmp.a ? trace_a : trace_b) << ": min d " << rep->d_min << " at t " << rep->t_at_d_min
                << " s, eps " << rep->eps_at_d_min << ", max V increase " << rep->max_V_increase << '\n';
    }
    return (tol >= 0.0 && !within) ? kExitCheckFailed : 0;
  }

  if (*sweep) {
    std::filesystem::create_directories(out_dir);
    const unsigned workers = jobs ? jobs : std::max(1u, std::thread::hardware_concurrency());
    std::vector<int> codes(scenarios.size(), 0);
    std::vector<std::string> summaries(scenarios.size());
    for (std::size_t begin = 0; begin < scenarios.size(); begin += workers) {
      std::vector<std::future<void>> batch;
      for (std::size_t i = begin; i < std::min(scenarios.size(), begin + workers); ++i) {
        batch.push_back(std::async(std::launch::async, [&, i] {
          const std::string stem = std::filesystem::path(scenarios[i]).stem().string();
          const std::string path = (std::filesystem::path(out_dir) / (stem + "." + format)).string();
          std::ostringstream summary;
          codes[i] = run_one(scenarios[i], path, format, overrides, summary);
          summaries[i] = summary.str();
        }));
      }
      for (auto& f : batch) f.get();
    }
    int worst = 0;
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
      std::cout << summaries[i];
      worst = std::max(worst, codes[i]);
    }
    return worst;
  }
  return 0;
}
