#include "mdq/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"
#include "mdq/errors.hpp"

namespace mdq {

namespace {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------- enum spellings

std::string extension_name(Extension e) {
  return e == Extension::constant_nearest ? "constant_nearest"
                                          : "initial_profile";
}

Extension parse_extension(const std::string& s) {
  if (s == "constant_nearest") return Extension::constant_nearest;
  if (s == "initial_profile") return Extension::initial_profile;
  throw ConfigError("grid.extension: unknown value '" + s + "'");
}

std::string delta_rule_name(DeltaRule r) {
  switch (r) {
    case DeltaRule::manual: return "manual";
    case DeltaRule::optimal_xt: return "optimal_xt";
    case DeltaRule::optimal_x: return "optimal_x";
    case DeltaRule::optimal_constant: return "optimal_constant";
  }
  return "manual";
}

DeltaRule parse_delta_rule(const std::string& s, const char* key) {
  if (s == "manual") return DeltaRule::manual;
  if (s == "optimal_xt") return DeltaRule::optimal_xt;
  if (s == "optimal_x") return DeltaRule::optimal_x;
  if (s == "optimal_constant") return DeltaRule::optimal_constant;
  throw ConfigError(std::string(key) + ": unknown value '" + s + "'");
}

std::string reference_name(ReferenceMode m) {
  return m == ReferenceMode::fine_grid ? "fine_grid" : "exact";
}

ReferenceMode parse_reference(const std::string& s) {
  if (s == "fine_grid") return ReferenceMode::fine_grid;
  if (s == "exact") return ReferenceMode::exact;
  throw ConfigError("study.reference: unknown value '" + s + "'");
}

// ------------------------------------------------------------ json helpers

void expect_keys(const json& j, const char* section,
                 const std::set<std::string>& allowed) {
  if (!j.is_object())
    throw ConfigError(std::string(section) + ": expected an object");
  for (const auto& item : j.items())
    if (!allowed.count(item.key()))
      throw ConfigError(std::string(section) + ": unknown key '" +
                        item.key() + "'");
}

template <typename T>
void read(const json& j, const char* key, T& into, const char* section) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    into = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(section) + "." + key + ": wrong type");
  }
}

void read_string(const json& j, const char* key, std::string& into,
                 const char* section) {
  read<std::string>(j, key, into, section);
}

// --------------------------------------------------------------- validation

void validate(const RunConfig& c) {
  static const std::set<std::string> names = {
      "linear_advection", "fractional_linear", "two_player_nonconvex",
      "smooth_u0_variant"};
  if (!names.count(c.problem))
    throw ConfigError("problem.name: unknown problem '" + c.problem + "'");
  if (!(c.sigma >= 0.0 && c.sigma < 2.0))
    throw ConfigError("problem.sigma: must lie in [0,2)");
  if (c.intensity < 0.0) throw ConfigError("problem.intensity: must be >= 0");
  if (c.horizon < 0.0) throw ConfigError("problem.horizon: must be >= 0");
  if (c.discount != -1.0 && c.discount < 0.0)
    throw ConfigError("problem.discount: must be >= 0 (or -1 to keep the default)");

  if (!(c.dx > 0.0)) throw ConfigError("grid.dx: must be positive");
  if (!(c.dt > 0.0)) throw ConfigError("grid.dt: must be positive");
  if (c.box_radius < c.dx)
    throw ConfigError("grid.box_radius: must be at least dx");

  if (c.scheme.theta < 0.0 || c.scheme.theta > 1.0)
    throw ConfigError("scheme.theta: must lie in [0,1]");
  if (c.scheme.vartheta < 0.0 || c.scheme.vartheta > 1.0)
    throw ConfigError("scheme.vartheta: must lie in [0,1]");
  if (!(c.scheme.fixed_point_tol > 0.0))
    throw ConfigError("scheme.fixed_point_tol: must be positive");
  if (c.scheme.fixed_point_max_iter < 1)
    throw ConfigError("scheme.fixed_point_max_iter: must be at least 1");
  if (c.scheme.delta < 0.0)
    throw ConfigError("scheme.delta: must be >= 0");
  if (c.scheme.correction &&
      (c.scheme.theta != 1.0 || c.scheme.vartheta != 1.0))
    throw ConfigError(
        "scheme.correction: needs the fully implicit scheme "
        "(theta = vartheta = 1)");

  if (c.levels < 3) throw ConfigError("study.levels: need at least 3");
  if (c.fine_factor < 4)
    throw ConfigError("study.fine_factor: must be at least 4");
  if (!(c.coupling.dt_factor > 0.0))
    throw ConfigError("study.dt_factor: must be positive");
  if (!(c.coupling.dt_power > 0.0))
    throw ConfigError("study.dt_power: must be positive");
  if (!(c.coupling.delta_factor > 0.0))
    throw ConfigError("study.delta_factor: must be positive");
  if (c.coupling.delta_power < 0.0)
    throw ConfigError("study.delta_power: must be >= 0");
  // the sweep runs on the configured grid, whose radii must lie in [dx, 1]
  for (double d : c.truncation_sweep)
    if (!(d >= c.dx && d <= 1.0))
      throw ConfigError(
          "study.truncation_sweep: radii must lie in [grid.dx, 1]");
  if (!c.truncation_sweep.empty()) {
    double lo = *std::min_element(c.truncation_sweep.begin(),
                                  c.truncation_sweep.end());
    if (!(c.truncation_reference >= c.dx && c.truncation_reference < lo))
      throw ConfigError(
          "study.truncation_reference: must lie in [grid.dx, min sweep "
          "radius)");
  }

  if (c.out_dir.empty()) throw ConfigError("output.directory: must not be empty");
  if (c.threads < 1 || c.threads > 64)
    throw ConfigError("output.threads: must lie in [1,64]");
}

}  // namespace

// ------------------------------------------------------------------ parsing

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  expect_keys(j, "config", {"problem", "grid", "scheme", "study", "output"});

  RunConfig c;
  if (j.contains("problem")) {
    const json& p = j["problem"];
    expect_keys(p, "problem",
                {"name", "sigma", "intensity", "horizon", "discount"});
    read_string(p, "name", c.problem, "problem");
    read(p, "sigma", c.sigma, "problem");
    read(p, "intensity", c.intensity, "problem");
    read(p, "horizon", c.horizon, "problem");
    read(p, "discount", c.discount, "problem");
  }
  if (j.contains("grid")) {
    const json& g = j["grid"];
    expect_keys(g, "grid", {"dx", "box_radius", "dt", "extension"});
    read(g, "dx", c.dx, "grid");
    read(g, "box_radius", c.box_radius, "grid");
    read(g, "dt", c.dt, "grid");
    std::string ext = extension_name(c.extension);
    read_string(g, "extension", ext, "grid");
    c.extension = parse_extension(ext);
  }
  if (j.contains("scheme")) {
    const json& s = j["scheme"];
    expect_keys(s, "scheme",
                {"theta", "vartheta", "delta_rule", "delta", "fixed_point_tol",
                 "fixed_point_max_iter", "correction"});
    read(s, "theta", c.scheme.theta, "scheme");
    read(s, "vartheta", c.scheme.vartheta, "scheme");
    std::string rule = delta_rule_name(c.scheme.delta_rule);
    read_string(s, "delta_rule", rule, "scheme");
    c.scheme.delta_rule = parse_delta_rule(rule, "scheme.delta_rule");
    read(s, "delta", c.scheme.delta, "scheme");
    read(s, "fixed_point_tol", c.scheme.fixed_point_tol, "scheme");
    read(s, "fixed_point_max_iter", c.scheme.fixed_point_max_iter, "scheme");
    read(s, "correction", c.scheme.correction, "scheme");
  }
  if (j.contains("study")) {
    const json& s = j["study"];
    expect_keys(s, "study",
                {"levels", "dt_factor", "dt_power", "delta_rule",
                 "delta_factor", "delta_power", "reference", "fine_factor",
                 "truncation_sweep", "truncation_reference", "consistency"});
    read(s, "levels", c.levels, "study");
    read(s, "dt_factor", c.coupling.dt_factor, "study");
    read(s, "dt_power", c.coupling.dt_power, "study");
    std::string rule = delta_rule_name(c.coupling.delta_rule);
    read_string(s, "delta_rule", rule, "study");
    c.coupling.delta_rule = parse_delta_rule(rule, "study.delta_rule");
    read(s, "delta_factor", c.coupling.delta_factor, "study");
    read(s, "delta_power", c.coupling.delta_power, "study");
    std::string ref = reference_name(c.reference);
    read_string(s, "reference", ref, "study");
    c.reference = parse_reference(ref);
    read(s, "fine_factor", c.fine_factor, "study");
    read(s, "truncation_sweep", c.truncation_sweep, "study");
    read(s, "truncation_reference", c.truncation_reference, "study");
    read(s, "consistency", c.consistency, "study");
  }
  if (j.contains("output")) {
    const json& o = j["output"];
    expect_keys(o, "output", {"directory", "threads", "seed"});
    read_string(o, "directory", c.out_dir, "output");
    read(o, "threads", c.threads, "output");
    read(o, "seed", c.seed, "output");
  }
  validate(c);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string serialize_config(const RunConfig& c) {
  json j;
  j["problem"] = {{"name", c.problem},
                  {"sigma", c.sigma},
                  {"intensity", c.intensity},
                  {"horizon", c.horizon},
                  {"discount", c.discount}};
  j["grid"] = {{"dx", c.dx},
               {"box_radius", c.box_radius},
               {"dt", c.dt},
               {"extension", extension_name(c.extension)}};
  j["scheme"] = {{"theta", c.scheme.theta},
                 {"vartheta", c.scheme.vartheta},
                 {"delta_rule", delta_rule_name(c.scheme.delta_rule)},
                 {"delta", c.scheme.delta},
                 {"fixed_point_tol", c.scheme.fixed_point_tol},
                 {"fixed_point_max_iter", c.scheme.fixed_point_max_iter},
                 {"correction", c.scheme.correction}};
  j["study"] = {{"levels", c.levels},
                {"dt_factor", c.coupling.dt_factor},
                {"dt_power", c.coupling.dt_power},
                {"delta_rule", delta_rule_name(c.coupling.delta_rule)},
                {"delta_factor", c.coupling.delta_factor},
                {"delta_power", c.coupling.delta_power},
                {"reference", reference_name(c.reference)},
                {"fine_factor", c.fine_factor},
                {"truncation_sweep", c.truncation_sweep},
                {"truncation_reference", c.truncation_reference},
                {"consistency", c.consistency}};
  j["output"] = {{"directory", c.out_dir},
                 {"threads", c.threads},
                 {"seed", c.seed}};
  return j.dump(2) + "\n";
}

// ------------------------------------------------------------ construction

ControlProblem make_problem(const RunConfig& c) {
  ControlProblem p = canonical_problem(c.problem, c.sigma, c.intensity);
  if (c.horizon > 0.0) p.horizon = c.horizon;
  if (c.discount >= 0.0) {
    const double rate = c.discount;
    p.discount = [rate](double, const Vec&, int, int) { return rate; };
  }
  return p;
}

Grid make_grid(const RunConfig& c, const ControlProblem& p) {
  return Grid::make(p.dim, c.dx, c.box_radius, c.dt, p.horizon, c.extension);
}

}  // namespace mdq
