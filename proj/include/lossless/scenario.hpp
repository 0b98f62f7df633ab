#pragma once

// Scenario documents, the closed-loop driver, trace capture and trace files.
//
// A scenario is a JSON document:
//
//   {
//     "name": "paper-fig4",
//     "mode": "combined",                    // free | lossless_only | nominal_only | combined
//     "body":      { "mass": 1.0, "inertia": [1.5, 1.5, 0.5], "gravity": 9.81 },
//     "initial":   { "position": [...], "rotation": ROT, "velocity": [...], "angular_velocity": [...] },
//     "slit":      { "position": [...], "rotation": ROT },
//     "gains":     { "G": 1.0 | [g1, g2, g3] | [[...], [...], [...]], "k_D": 1.5 },
//     "set_point": { "rotation": ROT },
//     "simulation":{ "step": 0.002, "steps": 25000, "reproject": false },
//     "mpc":       { "eps1": 0.005, "eps2": 0.1, "step": 0.1, "horizon": 10, "a_bound": [5, 5, 5],
//                    "resolve_every_step": false, "include_nominal_in_model": true,
//                    "max_iterations": 200, "stationarity_tol": 1e-8, "violation_tol": 1e-6 }
//   }
//
// ROT is either "identity", a row-major 3x3 array, or
// { "axis": [x, y, z], "angle_pi": k } for a rotation by k*pi about the axis
// (also accepted: "angle" in radians).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lossless/controllers.hpp"
#include "lossless/integrators.hpp"
#include "lossless/ocp.hpp"
#include "lossless/rigid_body.hpp"
#include "lossless/so3.hpp"

namespace lossless {

enum class ScenarioMode { kFree, kLosslessOnly, kNominalOnly, kCombined };

inline ControlMode control_mode(ScenarioMode m) {
  switch (m) {
    case ScenarioMode::kFree: return ControlMode::free();
    case ScenarioMode::kLosslessOnly: return ControlMode::lossless_only();
    case ScenarioMode::kNominalOnly: return ControlMode::nominal_only();
    case ScenarioMode::kCombined: return ControlMode::combined();
  }
  return ControlMode::free();
}

inline std::string to_string(ScenarioMode m) {
  switch (m) {
    case ScenarioMode::kFree: return "free";
    case ScenarioMode::kLosslessOnly: return "lossless_only";
    case ScenarioMode::kNominalOnly: return "nominal_only";
    case ScenarioMode::kCombined: return "combined";
  }
  return "free";
}

struct MpcSettings {
  double T_mpc = 0.1;
  int horizon = 10;
  Vec3 a_bound = Vec3::Constant(5.0);
  bool resolve_every_step = false;
  bool include_nominal_in_model = true;
  nlp::Options solver;
};

struct ScenarioConfig {
  std::string name;
  ScenarioMode mode = ScenarioMode::kFree;
  BodyParams body;
  State initial;
  SlitSpec slit;
  AttitudeGains gains;
  SetPoint set_point;
  double T_sim = 0.002;
  long n_steps = 1;
  bool reproject = false;
  MpcSettings mpc;
  /// Fields filled with defaults, with the value used ("gains.k_D=1.5 (default)").
  std::vector<std::string> defaults_used;

  /// MPC steps between re-solves (1 when re-solving at the simulation rate).
  [[nodiscard]] long resolve_period() const {
    if (mpc.resolve_every_step) return 1;
    return std::max(1L, std::lround(mpc.T_mpc / T_sim));
  }

  [[nodiscard]] OcpProblem ocp_problem() const {
    OcpProblem prob;
    prob.horizon = mpc.horizon;
    prob.T_mpc = StepSize(mpc.T_mpc);
    prob.a_bound = mpc.a_bound;
    prob.slit = slit;
    prob.body = body;
    prob.initial = initial;
    if (control_mode(mode).nominal && mpc.include_nominal_in_model) {
      prob.nominal = NominalModel{gains, set_point};
    }
    prob.solver = mpc.solver;
    return prob;
  }
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

using nlohmann::json;

inline const json& require(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw ValidationError(path.empty() ? key : path + "." + key, "required field is missing");
  }
  return obj.at(key);
}

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline double as_number(const json& j, const std::string& path) {
  if (!j.is_number()) {
    throw ValidationError(path, "expected a number");
  }
  const double v = j.get<double>();
  if (!std::isfinite(v)) {
    throw ValidationError(path, "must be finite");
  }
  return v;
}

inline Vec3 as_vec3(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) {
    throw ValidationError(path, "expected an array of 3 numbers");
  }
  return {as_number(j[0], path + "[0]"), as_number(j[1], path + "[1]"), as_number(j[2], path + "[2]")};
}

inline Mat3 as_mat3(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) {
    throw ValidationError(path, "expected a 3x3 array");
  }
  Mat3 m;
  for (int r = 0; r < 3; ++r) {
    const Vec3 row = as_vec3(j[static_cast<std::size_t>(r)], path + "[" + std::to_string(r) + "]");
    m.row(r) = row.transpose();
  }
  return m;
}

inline Rotation as_rotation(const json& j, const std::string& path) {
  Mat3 m;
  if (j.is_string()) {
    if (j.get<std::string>() != "identity") {
      throw ValidationError(path, "unknown rotation keyword '" + j.get<std::string>() + "'");
    }
    m = Mat3::Identity();
  } else if (j.is_array()) {
    m = as_mat3(j, path);
  } else if (j.is_object()) {
    Vec3 axis = as_vec3(require(j, "axis", path), join(path, "axis"));
    if (!(axis.norm() > 0.0)) {
      throw ValidationError(join(path, "axis"), "must be non-zero");
    }
    axis.normalize();
    double angle = 0.0;
    if (j.contains("angle_pi")) {
      angle = as_number(j.at("angle_pi"), join(path, "angle_pi")) * M_PI;
    } else {
      angle = as_number(require(j, "angle", path), join(path, "angle"));
    }
    m = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  } else {
    throw ValidationError(path, "expected \"identity\", a 3x3 array or {axis, angle_pi}");
  }
  try {
    return Rotation(m);
  } catch (const Degenerate& e) {
    throw ValidationError(path, e.what());
  }
}

inline Mat3 as_gain_matrix(const json& j, const std::string& path) {
  if (j.is_number()) {
    return as_number(j, path) * Mat3::Identity();
  }
  if (j.is_array() && j.size() == 3 && j[0].is_number()) {
    return as_vec3(j, path).asDiagonal();
  }
  return as_mat3(j, path);
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback, const std::string& path,
         std::vector<std::string>* defaults = nullptr) {
  if (obj.is_object() && obj.contains(key)) {
    const json& v = obj.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ValidationError(join(path, key), "expected true/false");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ValidationError(join(path, key), "expected an integer");
      return v.get<T>();
    } else {
      return static_cast<T>(as_number(v, join(path, key)));
    }
  }
  if (defaults) {
    std::ostringstream os;
    os << join(path, key) << "=" << fallback << " (default)";
    defaults->push_back(os.str());
  }
  return fallback;
}

inline ScenarioMode parse_mode(const json& j) {
  if (!j.is_string()) {
    throw ValidationError("mode", "expected a string");
  }
  static const std::map<std::string, ScenarioMode> kModes = {{"free", ScenarioMode::kFree},
                                                             {"lossless_only", ScenarioMode::kLosslessOnly},
                                                             {"nominal_only", ScenarioMode::kNominalOnly},
                                                             {"combined", ScenarioMode::kCombined}};
  const auto it = kModes.find(j.get<std::string>());
  if (it == kModes.end()) {
    throw ValidationError("mode", "must be one of free, lossless_only, nominal_only, combined");
  }
  return it->second;
}

inline json parse_value_literal(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

}  // namespace detail

/// Sets the value at a dotted path ("mpc.eps2=0.05"). The right-hand side is
/// parsed as JSON when possible and taken as a string otherwise.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ValidationError(assignment, "override must look like key.path=value");
  }
  const std::string key = assignment.substr(0, eq);
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) {
      throw ValidationError(key, "empty path component in override");
    }
    if (!node->is_object()) {
      throw ValidationError(key, "override path crosses a non-object value");
    }
    if (dot == std::string::npos) {
      (*node)[part] = detail::parse_value_literal(assignment.substr(eq + 1));
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) {
      *node = nlohmann::json::object();
    }
    start = dot + 1;
  }
}

/// Validates a parsed document and fills defaults. Throws ValidationError
/// naming the offending field.
inline ScenarioConfig load_scenario(const nlohmann::json& doc) {
  using detail::as_number;
  using detail::as_rotation;
  using detail::as_vec3;
  using detail::get_or;
  using detail::require;
  if (!doc.is_object()) {
    throw ValidationError("<root>", "scenario document must be an object");
  }
  ScenarioConfig cfg;
  cfg.name = doc.contains("name") && doc.at("name").is_string() ? doc.at("name").get<std::string>() : "scenario";
  cfg.mode = detail::parse_mode(require(doc, "mode", ""));
  const ControlMode mode = control_mode(cfg.mode);

  const auto& body = require(doc, "body", "");
  cfg.body.mass = as_number(require(body, "mass", "body"), "body.mass");
  const auto& inertia = require(body, "inertia", "body");
  cfg.body.inertia = inertia.is_array() && inertia.size() == 3 && inertia[0].is_number()
                         ? Mat3(as_vec3(inertia, "body.inertia").asDiagonal())
                         : detail::as_mat3(inertia, "body.inertia");
  cfg.body.gravity = get_or<double>(body, "gravity", kDefaultGravity, "body", &cfg.defaults_used);
  try {
    cfg.body.validate();
  } catch (const InvalidArgument& e) {
    throw ValidationError("body", e.what());
  }

  const auto& init = require(doc, "initial", "");
  cfg.initial.p = as_vec3(require(init, "position", "initial"), "initial.position");
  cfg.initial.R = as_rotation(require(init, "rotation", "initial"), "initial.rotation").matrix();
  cfg.initial.v = as_vec3(require(init, "velocity", "initial"), "initial.velocity");
  cfg.initial.w = as_vec3(require(init, "angular_velocity", "initial"), "initial.angular_velocity");

  const auto& slit = require(doc, "slit", "");
  cfg.slit.p_star = as_vec3(require(slit, "position", "slit"), "slit.position");
  if (slit.contains("rotation")) {
    cfg.slit.R_star = as_rotation(slit.at("rotation"), "slit.rotation");
  } else {
    cfg.defaults_used.emplace_back("slit.rotation=identity (default)");
  }

  const nlohmann::json empty = nlohmann::json::object();
  const auto& mpc = doc.contains("mpc") ? doc.at("mpc") : empty;
  cfg.slit.eps1 = as_number(require(mpc, "eps1", "mpc"), "mpc.eps1");
  cfg.slit.eps2 = as_number(require(mpc, "eps2", "mpc"), "mpc.eps2");
  if (!(cfg.slit.eps1 > 0.0)) throw ValidationError("mpc.eps1", "must be positive");
  if (!(cfg.slit.eps2 > 0.0)) throw ValidationError("mpc.eps2", "must be positive");

  if (mode.lossless) {
    cfg.mpc.T_mpc = as_number(require(mpc, "step", "mpc"), "mpc.step");
    const auto& horizon = require(mpc, "horizon", "mpc");
    if (!horizon.is_number_integer()) throw ValidationError("mpc.horizon", "expected an integer");
    cfg.mpc.horizon = horizon.get<int>();
  } else {
    cfg.mpc.T_mpc = get_or<double>(mpc, "step", cfg.mpc.T_mpc, "mpc");
    cfg.mpc.horizon = get_or<int>(mpc, "horizon", cfg.mpc.horizon, "mpc");
  }
  if (!(cfg.mpc.T_mpc > 0.0 && cfg.mpc.T_mpc <= 1.0)) throw ValidationError("mpc.step", "must satisfy 0 < T <= 1");
  if (cfg.mpc.horizon < 1) throw ValidationError("mpc.horizon", "must be >= 1");
  if (mpc.contains("a_bound")) {
    const auto& ab = mpc.at("a_bound");
    cfg.mpc.a_bound = ab.is_number() ? Vec3::Constant(as_number(ab, "mpc.a_bound")) : as_vec3(ab, "mpc.a_bound");
  } else if (mode.lossless) {
    cfg.defaults_used.emplace_back("mpc.a_bound=[5,5,5] (default)");
  }
  if (!(cfg.mpc.a_bound.array() > 0.0).all()) throw ValidationError("mpc.a_bound", "entries must be positive");
  cfg.mpc.resolve_every_step = get_or<bool>(mpc, "resolve_every_step", false, "mpc");
  cfg.mpc.include_nominal_in_model = get_or<bool>(mpc, "include_nominal_in_model", true, "mpc");
  cfg.mpc.solver.max_iterations = get_or<int>(mpc, "max_iterations", cfg.mpc.solver.max_iterations, "mpc");
  cfg.mpc.solver.stationarity_tol = get_or<double>(mpc, "stationarity_tol", cfg.mpc.solver.stationarity_tol, "mpc");
  cfg.mpc.solver.violation_tol = get_or<double>(mpc, "violation_tol", cfg.mpc.solver.violation_tol, "mpc");
  if (cfg.mpc.solver.max_iterations < 1) throw ValidationError("mpc.max_iterations", "must be >= 1");

  const auto& gains = doc.contains("gains") ? doc.at("gains") : empty;
  if (gains.contains("G")) {
    cfg.gains.G = detail::as_gain_matrix(gains.at("G"), "gains.G");
  } else {
    cfg.defaults_used.emplace_back("gains.G=I (default)");
  }
  cfg.gains.k_D = get_or<double>(gains, "k_D", cfg.gains.k_D, "gains", &cfg.defaults_used);
  try {
    cfg.gains.validate();
  } catch (const Error& e) {
    throw ValidationError("gains", e.what());
  }

  if (doc.contains("set_point")) {
    cfg.set_point.R_d = as_rotation(require(doc.at("set_point"), "rotation", "set_point"), "set_point.rotation");
  } else if (mode.nominal) {
    throw ValidationError("set_point", "required field is missing");
  }

  const auto& sim = require(doc, "simulation", "");
  cfg.T_sim = as_number(require(sim, "step", "simulation"), "simulation.step");
  if (!(cfg.T_sim > 0.0 && cfg.T_sim <= 1.0)) throw ValidationError("simulation.step", "must satisfy 0 < T <= 1");
  const auto& steps = require(sim, "steps", "simulation");
  if (!steps.is_number_integer() || steps.get<long>() < 1) {
    throw ValidationError("simulation.steps", "must be an integer >= 1");
  }
  cfg.n_steps = steps.get<long>();
  cfg.reproject = get_or<bool>(sim, "reproject", false, "simulation");
  return cfg;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open '" + path + "'");
  }
  try {
    return nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

/// Reads, overrides and validates a scenario file.
inline ScenarioConfig load_scenario_file(const std::string& path, const std::vector<std::string>& overrides = {}) {
  nlohmann::json doc = read_json_file(path);
  for (const auto& o : overrides) {
    apply_override(doc, o);
  }
  return load_scenario(doc);
}

// ---------------------------------------------------------------------------
// Traces

struct TraceRecord {
  double t = 0.0;
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 w = Vec3::Zero();
  Mat3 R = Mat3::Identity();
  double K = 0.0;
  double U = 0.0;
  double V = 0.0;
  double eps = 0.0;
  double d = 0.0;
  double constraint_g = 0.0;
  Vec3 a = Vec3::Zero();
  Vec3 tau_prime = Vec3::Zero();
  Vec3 tau_total = Vec3::Zero();
  std::optional<double> mpc_cost;
  std::optional<double> mpc_violation;
  std::optional<double> mpc_iters;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

struct Trace {
  std::vector<std::string> header_notes;  // written as '#' lines before the CSV header
  std::vector<TraceRecord> records;
};

/// Column names with units, in file order.
inline const std::vector<std::string>& trace_columns() {
  static const std::vector<std::string> kColumns = [] {
    std::vector<std::string> c{"t[s]"};
    for (const char* ax : {"x", "y", "z"}) c.push_back(std::string("p_") + ax + "[m]");
    for (const char* ax : {"x", "y", "z"}) c.push_back(std::string("v_") + ax + "[m/s]");
    for (const char* ax : {"x", "y", "z"}) c.push_back(std::string("w_") + ax + "[rad/s]");
    for (int r = 1; r <= 3; ++r) {
      for (int col = 1; col <= 3; ++col) c.push_back("R_" + std::to_string(r) + std::to_string(col) + "[-]");
    }
    c.insert(c.end(), {"K[J]", "U[J]", "V[J]", "eps[-]", "d[m^2]", "constraint_g[-]"});
    for (const char* ax : {"x", "y", "z"}) c.push_back(std::string("a_") + ax + "[N*m*s/rad]");
    for (const char* ax : {"x", "y", "z"}) c.push_back(std::string("tau_prime_") + ax + "[N*m]");
    for (const char* ax : {"x", "y", "z"}) c.push_back(std::string("tau_total_") + ax + "[N*m]");
    c.insert(c.end(), {"mpc_cost[N^2*m^2]", "mpc_violation[-]", "mpc_iters[-]"});
    return c;
  }();
  return kColumns;
}

/// Column name without the bracketed unit; used as the JSONL key.
inline std::string column_key(const std::string& column) { return column.substr(0, column.find('[')); }

namespace detail {

inline std::vector<std::optional<double>> flatten(const TraceRecord& r) {
  std::vector<std::optional<double>> v;
  v.reserve(trace_columns().size());
  v.emplace_back(r.t);
  for (const Vec3* x : {&r.p, &r.v, &r.w}) {
    for (int i = 0; i < 3; ++i) v.emplace_back((*x)(i));
  }
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) v.emplace_back(r.R(i, j));
  }
  for (double x : {r.K, r.U, r.V, r.eps, r.d, r.constraint_g}) v.emplace_back(x);
  for (const Vec3* x : {&r.a, &r.tau_prime, &r.tau_total}) {
    for (int i = 0; i < 3; ++i) v.emplace_back((*x)(i));
  }
  v.push_back(r.mpc_cost);
  v.push_back(r.mpc_violation);
  v.push_back(r.mpc_iters);
  return v;
}

inline TraceRecord unflatten(const std::vector<std::optional<double>>& v) {
  TraceRecord r;
  std::size_t i = 0;
  auto next = [&]() { return v.at(i++).value_or(std::numeric_limits<double>::quiet_NaN()); };
  r.t = next();
  for (Vec3* x : {&r.p, &r.v, &r.w}) {
    for (int k = 0; k < 3; ++k) (*x)(k) = next();
  }
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) r.R(a, b) = next();
  }
  for (double* x : {&r.K, &r.U, &r.V, &r.eps, &r.d, &r.constraint_g}) *x = next();
  for (Vec3* x : {&r.a, &r.tau_prime, &r.tau_total}) {
    for (int k = 0; k < 3; ++k) (*x)(k) = next();
  }
  r.mpc_cost = v.at(i++);
  r.mpc_violation = v.at(i++);
  r.mpc_iters = v.at(i++);
  return r;
}

inline std::string format_number(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline double parse_number(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') {
    throw ParseError(where + ": not a number: '" + s + "'");
  }
  return v;
}

}  // namespace detail

enum class TraceFormat { kCsv, kJsonl };

inline void write_trace(const Trace& trace, std::ostream& out, TraceFormat format) {
  const auto& cols = trace_columns();
  if (format == TraceFormat::kCsv) {
    for (const auto& note : trace.header_notes) {
      out << "# " << note << '\n';
    }
    for (std::size_t i = 0; i < cols.size(); ++i) {
      out << (i ? "," : "") << cols[i];
    }
    out << '\n';
    for (const auto& r : trace.records) {
      const auto vals = detail::flatten(r);
      for (std::size_t i = 0; i < vals.size(); ++i) {
        if (i) out << ',';
        if (vals[i]) out << detail::format_number(*vals[i]);
      }
      out << '\n';
    }
    return;
  }
  // JSONL values are emitted by hand so that they use the same 17-digit
  // representation as the CSV.
  for (const auto& r : trace.records) {
    const auto vals = detail::flatten(r);
    out << '{';
    for (std::size_t i = 0; i < vals.size(); ++i) {
      out << (i ? "," : "") << '"' << column_key(cols[i]) << "\":";
      if (vals[i] && std::isfinite(*vals[i])) {
        out << detail::format_number(*vals[i]);
      } else {
        out << "null";
      }
    }
    out << "}\n";
  }
}

/// Writes the trace to path. Throws IoError when the file cannot be written.
inline void write_trace(const Trace& trace, const std::string& path, TraceFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot open '" + path + "' for writing");
  }
  write_trace(trace, out, format);
  out.flush();
  if (!out) {
    throw IoError("write to '" + path + "' failed");
  }
}

inline Trace read_trace_csv(std::istream& in, const std::string& name = "<stream>") {
  Trace trace;
  std::string line;
  bool header_seen = false;
  long line_no = 0;
  const auto& cols = trace_columns();
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("# ", 0) == 0) {
      trace.header_notes.push_back(line.substr(2));
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    const std::string where = name + ":" + std::to_string(line_no);
    if (!header_seen) {
      if (fields != cols) {
        throw ParseError(where + ": unexpected CSV header");
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != cols.size()) {
      throw ParseError(where + ": expected " + std::to_string(cols.size()) + " fields, got " +
                       std::to_string(fields.size()));
    }
    std::vector<std::optional<double>> vals;
    vals.reserve(fields.size());
    for (const auto& field : fields) {
      if (field.empty()) {
        vals.emplace_back(std::nullopt);
      } else {
        vals.emplace_back(detail::parse_number(field, where));
      }
    }
    trace.records.push_back(detail::unflatten(vals));
  }
  if (!header_seen) {
    throw ParseError(name + ": missing CSV header");
  }
  return trace;
}

inline Trace read_trace_jsonl(std::istream& in, const std::string& name = "<stream>") {
  Trace trace;
  std::string line;
  long line_no = 0;
  const auto& cols = trace_columns();
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(name + ":" + std::to_string(line_no) + ": " + e.what());
    }
    std::vector<std::optional<double>> vals;
    for (const auto& c : cols) {
      const std::string key = column_key(c);
      if (!j.contains(key)) {
        throw ParseError(name + ":" + std::to_string(line_no) + ": missing field '" + key + "'");
      }
      if (j.at(key).is_null()) {
        vals.emplace_back(std::nullopt);
      } else {
        vals.emplace_back(j.at(key).get<double>());
      }
    }
    trace.records.push_back(detail::unflatten(vals));
  }
  return trace;
}

/// Reads a CSV or JSONL trace (JSONL when the first non-blank byte is '{').
inline Trace read_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open '" + path + "'");
  }
  int c = in.peek();
  while (c == ' ' || c == '\n' || c == '\r' || c == '\t') {
    in.get();
    c = in.peek();
  }
  if (c == '{') {
    return read_trace_jsonl(in, path);
  }
  return read_trace_csv(in, path);
}

// ---------------------------------------------------------------------------
// Running scenarios

inline TraceRecord make_record(double t, const State& s, const ControlInput& u, const Vec3& tau_total,
                               const ScenarioConfig& cfg) {
  TraceRecord r;
  r.t = t;
  r.p = s.p;
  r.v = s.v;
  r.w = s.w;
  r.R = s.R;
  r.K = kinetic_energy(s, cfg.body);
  r.U = potential_energy(s.R, cfg.gains.G, cfg.set_point.R_d);
  r.V = r.K + r.U;
  r.eps = orientation_error<double>(s.R, cfg.slit.R_star.matrix());
  r.d = slit_distance<double>(s.p, cfg.slit);
  r.constraint_g = slit_constraint<double>(s, cfg.slit);
  r.a = u.a;
  r.tau_prime = u.tau_prime;
  r.tau_total = tau_total;
  return r;
}

inline std::vector<std::string> provenance_notes(const ScenarioConfig& cfg) {
  std::vector<std::string> notes;
  notes.push_back("scenario: " + cfg.name + " mode=" + to_string(cfg.mode));
  for (const auto& d : cfg.defaults_used) {
    notes.push_back("default: " + d);
  }
  return notes;
}

/// Runs the scenario: composite control every simulation step and, when the
/// lossless channel is on, an MPC re-solve every resolve_period() steps.
/// Deterministic; returns n_steps + 1 records.
inline Trace run_scenario(const ScenarioConfig& cfg) {
  const ControlMode mode = control_mode(cfg.mode);
  std::optional<MpcController> mpc;
  if (mode.lossless) {
    mpc.emplace(cfg.ocp_problem());
  }
  const long period = cfg.resolve_period();
  std::vector<std::optional<MpcDiagnostics>> diagnostics;
  diagnostics.reserve(static_cast<std::size_t>(cfg.n_steps) + 1);

  const ControlLaw law = [&](long k, const State& s) {
    Vec3 a_hold = Vec3::Zero();
    if (mpc) {
      if (k % period == 0) {
        mpc->step(s);
      }
      a_hold = mpc->a_hold();
      diagnostics.emplace_back(mpc->diagnostics());
    } else {
      diagnostics.emplace_back(std::nullopt);
    }
    return composite_control(k, s, cfg.set_point, cfg.gains, a_hold, mode);
  };
  const auto sim = simulate(cfg.initial, law, cfg.body, StepSize(cfg.T_sim), cfg.n_steps,
                            SimulationOptions{cfg.reproject});

  Trace trace;
  trace.header_notes = provenance_notes(cfg);
  trace.records.reserve(sim.size());
  for (std::size_t i = 0; i < sim.size(); ++i) {
    TraceRecord r = make_record(sim[i].t, sim[i].state, sim[i].input, sim[i].tau_total, cfg);
    const auto& diag = diagnostics[std::min(i, diagnostics.size() - 1)];
    if (diag) {
      r.mpc_cost = diag->cost;
      r.mpc_violation = diag->max_violation;
      r.mpc_iters = static_cast<double>(diag->iterations);
    }
    trace.records.push_back(std::move(r));
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Reporting

struct EnergyReport {
  std::size_t records = 0;
  double V0 = 0.0;
  double max_V_increase = 0.0;          // max_k V(t_k+1) - V(t_k)
  double max_V_increase_relative = 0.0; // divided by V(t_0)
  double K0 = 0.0;
  double K_drift_max = 0.0;    // max_k |K(t_k) - K(0)| / K(0)
  double K_drift_final = 0.0;  // |K(t_N) - K(0)| / K(0)
  double d_min = 0.0;
  double t_at_d_min = 0.0;
  std::size_t index_at_d_min = 0;
  double eps_at_d_min = 0.0;
  double constraint_g_at_d_min = 0.0;
  double eps_bound_at_d_min = 0.0;  // eps2 (d_min + eps1), only when slit constants are given
  double min_constraint_g = 0.0;
  double max_constraint_g = 0.0;
  double max_constraint_g_before_closest = 0.0;  // over [t(d_min) - window, t(d_min)]
  double final_omega_norm = 0.0;
};

/// Summarizes a non-empty trace. `window` is the time span before closest
/// approach used for max_constraint_g_before_closest.
inline EnergyReport energy_report(const Trace& trace, std::optional<SlitSpec> slit = std::nullopt,
                                  double window = 2.0) {
  if (trace.records.empty()) {
    throw InvalidArgument("energy_report: empty trace");
  }
  const auto& recs = trace.records;
  EnergyReport rep;
  rep.records = recs.size();
  rep.V0 = recs.front().V;
  rep.K0 = recs.front().K;
  rep.max_V_increase = -std::numeric_limits<double>::infinity();
  rep.d_min = std::numeric_limits<double>::infinity();
  rep.min_constraint_g = std::numeric_limits<double>::infinity();
  rep.max_constraint_g = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& r = recs[i];
    if (i > 0) {
      rep.max_V_increase = std::max(rep.max_V_increase, r.V - recs[i - 1].V);
    }
    if (rep.K0 > 0.0) {
      rep.K_drift_max = std::max(rep.K_drift_max, std::abs(r.K - rep.K0) / rep.K0);
    }
    if (r.d < rep.d_min) {
      rep.d_min = r.d;
      rep.index_at_d_min = i;
    }
    rep.min_constraint_g = std::min(rep.min_constraint_g, r.constraint_g);
    rep.max_constraint_g = std::max(rep.max_constraint_g, r.constraint_g);
  }
  if (recs.size() == 1) rep.max_V_increase = 0.0;
  rep.max_V_increase_relative = rep.V0 != 0.0 ? rep.max_V_increase / std::abs(rep.V0) : rep.max_V_increase;
  rep.K_drift_final = rep.K0 > 0.0 ? std::abs(recs.back().K - rep.K0) / rep.K0 : 0.0;
  const auto& closest = recs[rep.index_at_d_min];
  rep.t_at_d_min = closest.t;
  rep.eps_at_d_min = closest.eps;
  rep.constraint_g_at_d_min = closest.constraint_g;
  if (slit) {
    rep.eps_bound_at_d_min = slit->eps2 * (rep.d_min + slit->eps1);
  }
  rep.max_constraint_g_before_closest = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i <= rep.index_at_d_min; ++i) {
    if (recs[i].t >= closest.t - window - 1e-12) {
      rep.max_constraint_g_before_closest = std::max(rep.max_constraint_g_before_closest, recs[i].constraint_g);
    }
  }
  rep.final_omega_norm = recs.back().w.norm();
  return rep;
}

inline std::string format_report(const EnergyReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << std::scientific;
  os << "records                      " << r.records << '\n'
     << "V(0)                         " << r.V0 << " J\n"
     << "max V increase per step      " << r.max_V_increase << " J (" << r.max_V_increase_relative << " of V(0))\n"
     << "K drift max / final          " << r.K_drift_max << " / " << r.K_drift_final << " (relative)\n"
     << "closest approach             d = " << r.d_min << " m^2 at t = " << std::defaultfloat << r.t_at_d_min
     << std::scientific << " s\n"
     << "eps at closest approach      " << r.eps_at_d_min;
  if (r.eps_bound_at_d_min > 0.0) {
    os << " (bound eps2 (d + eps1) = " << r.eps_bound_at_d_min << ", "
       << (r.eps_at_d_min < r.eps_bound_at_d_min ? "satisfied" : "VIOLATED") << ")";
  }
  os << '\n'
     << "constraint g min / max       " << r.min_constraint_g << " / " << r.max_constraint_g << '\n'
     << "max g in 2 s before closest  " << r.max_constraint_g_before_closest << '\n'
     << "final |w|                    " << r.final_omega_norm << " rad/s\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Comparing traces

struct FieldDeviation {
  std::string field;
  double max_abs = 0.0;
  double t_at_max = 0.0;
};

struct TraceComparison {
  std::vector<FieldDeviation> fields;
  EnergyReport a;
  EnergyReport b;
};

/// Scalar trace field by JSONL key ("K", "V", "eps", "w_x", ...).
inline double trace_field(const TraceRecord& r, const std::string& key) {
  const auto& cols = trace_columns();
  const auto vals = detail::flatten(r);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (column_key(cols[i]) == key) {
      return vals[i].value_or(std::numeric_limits<double>::quiet_NaN());
    }
  }
  throw InvalidArgument("unknown trace field '" + key + "'");
}

/// Record-by-record max absolute deviation of each field. Throws GridMismatch
/// when the traces differ in length or in any time stamp.
inline TraceComparison compare_traces(const Trace& a, const Trace& b, const std::vector<std::string>& fields) {
  if (a.records.size() != b.records.size()) {
    throw GridMismatch("traces have " + std::to_string(a.records.size()) + " and " +
                       std::to_string(b.records.size()) + " records");
  }
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    if (std::abs(a.records[i].t - b.records[i].t) > 1e-9) {
      throw GridMismatch("time stamps differ at record " + std::to_string(i));
    }
  }
  TraceComparison cmp;
  for (const auto& f : fields) {
    FieldDeviation dev{f, 0.0, a.records.empty() ? 0.0 : a.records.front().t};
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      const double x = trace_field(a.records[i], f);
      const double y = trace_field(b.records[i], f);
      const double diff = (std::isnan(x) && std::isnan(y)) ? 0.0 : std::abs(x - y);
      if (!(diff <= dev.max_abs)) {
        dev.max_abs = diff;
        dev.t_at_max = a.records[i].t;
      }
    }
    cmp.fields.push_back(dev);
  }
  if (!a.records.empty()) {
    cmp.a = energy_report(a);
    cmp.b = energy_report(b);
  }
  return cmp;
}

}  // namespace lossless
