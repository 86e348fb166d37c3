#pragma once

// Uniform space-time grid on the box |x|_inf <= L, nodes x_j = j*dx with
// multi-index j in [-J, J]^N, plus piecewise-multilinear (tent) interpolation
// and solution-field CSV I/O.
//
// Values outside the box are supplied by an extension policy:
//   constant_nearest : clamp to the nearest box node (default)
//   initial_profile  : evaluate the initial datum at the exterior point

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

#include "mdq/errors.hpp"

namespace mdq {

using Vec = Eigen::VectorXd;
using IVec = Eigen::VectorXi;

enum class Extension { constant_nearest, initial_profile };

struct Grid {
  int dim = 1;         // spatial dimension N
  double dx = 0.1;     // spacing
  int half_nodes = 1;  // J; per-axis indices run -J..J
  double dt = 0.1;
  int steps = 1;       // time levels 0..steps, steps*dt = horizon
  Extension extension = Extension::constant_nearest;

  // Snaps the box radius to a whole number of cells and the step count to
  // cover the horizon exactly.
  static Grid make(int dim, double dx, double box_radius, double dt,
                   double horizon, Extension ext = Extension::constant_nearest);

  double box_radius() const { return half_nodes * dx; }
  double horizon() const { return steps * dt; }
  double time(int n) const { return n * dt; }
  int nodes_per_axis() const { return 2 * half_nodes + 1; }
  long node_count() const;

  long flatten(const IVec& j) const;   // multi-index -> storage index
  IVec unflatten(long idx) const;      // storage index -> multi-index
  Vec point(const IVec& j) const { return j.cast<double>() * dx; }
  Vec point(long idx) const { return point(unflatten(idx)); }
  bool inside(const IVec& j) const;
};

// Tent (hat) weight of node j at point x: prod_i max(0, 1 - |x_i/dx - j_i|).
// The tents over all nodes of Z^N form a partition of unity.
double tent_weight(const Grid& g, const IVec& j, const Vec& x);

// A time slice plus the rule for values beyond the box.  exterior is only
// consulted under the initial_profile policy.
struct SliceView {
  const Grid* grid;
  const Vec* values;
  std::function<double(const Vec&)> exterior;

  double at(const IVec& j) const;
};

// Multilinear interpolation of the slice at an arbitrary point.
double interpolate(const SliceView& view, const Vec& x);

// Time-indexed stack of slices produced by the solver.
struct SolutionField {
  Grid grid;
  std::vector<Vec> slices;  // size steps+1, each of grid.node_count()

  const Vec& initial() const { return slices.front(); }
  const Vec& final() const { return slices.back(); }
};

// CSV with header t,x1,...,xN,value; one row per (time level, node).
// Numbers are printed with 17 significant digits so files are byte-stable.
void write_solution_csv(const SolutionField& field, const std::string& path);

// Checkpoint: a single slice with its time level.
void write_slice_csv(const Grid& g, const Vec& slice, int time_index,
                     const std::string& path);
std::pair<int, Vec> read_slice_csv(const Grid& g, const std::string& path);

// Shared numeric formatting for every CSV writer (byte-deterministic).
std::string format_number(double v);

}  // namespace mdq
