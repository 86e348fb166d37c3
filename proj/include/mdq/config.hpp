#pragma once

// Run configuration for the command-line front end: strict JSON in (unknown
// keys and out-of-range values are rejected, missing keys fall back to
// defaults), canonical JSON out (fixed key order, so serialising a parsed
// config reproduces it byte for byte), plus constructors for the problem and
// grid a config describes.

#include <string>
#include <vector>

#include "mdq/analysis.hpp"
#include "mdq/grid.hpp"
#include "mdq/problem.hpp"
#include "mdq/stencil.hpp"

namespace mdq {

struct RunConfig {
  // problem section
  std::string problem = "fractional_linear";  // canonical problem name
  double sigma = 0.5;
  double intensity = 1.0;
  double horizon = 0.0;   // 0 keeps the canonical problem's default
  double discount = -1.0; // >= 0 overrides the discount with that constant

  // grid section
  double dx = 0.125;
  double box_radius = 2.0;
  double dt = 0.0625;
  Extension extension = Extension::constant_nearest;

  // scheme section
  SchemeParams scheme;

  // study section (rates subcommand)
  int levels = 3;
  CouplingRule coupling;
  ReferenceMode reference = ReferenceMode::fine_grid;
  int fine_factor = 4;
  std::vector<double> truncation_sweep;  // empty: skip the radius sweep
  double truncation_reference = 0.0;
  bool consistency = false;              // run the ingredient sweeps too

  // output section
  std::string out_dir = "out";
  int threads = 1;
  unsigned seed = 42;
};

// Parse + validate; every complaint is a ConfigError naming the key.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

// Canonical serialisation: every field, fixed order, two-space indent,
// trailing newline.  parse(serialize(c)) reproduces c exactly.
std::string serialize_config(const RunConfig& c);

// Instantiate what the config describes.
ControlProblem make_problem(const RunConfig& c);
Grid make_grid(const RunConfig& c, const ControlProblem& p);

}  // namespace mdq
