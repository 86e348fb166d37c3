#pragma once

// Convergence harness on top of the solver: proven-rate lookup, discrete
// time-regularity modulus, a high-accuracy oracle for the compensated jump
// operator (a quadrature route independent of the one the scheme runs on),
// manufactured-source construction, grid-refinement studies with log-log
// rate fitting, per-ingredient consistency-order measurements, and a
// truncation-radius sweep.

#include <Eigen/Dense>

#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "mdq/grid.hpp"
#include "mdq/problem.hpp"
#include "mdq/stencil.hpp"
#include "mdq/stepper.hpp"

namespace mdq {

// --------------------------------------------------------------- rate table

// Proven convergence exponents: error <= C (dt^time + dx^space), possibly
// with logarithmic factors at the critical order sigma = 1.  branch names
// the regime the pair came from.
struct RateExponents {
  double time = 0.5;
  double space = 0.5;
  bool log_time = false;
  bool log_space = false;
  std::string branch;
};

// Exponent pair for fractional order sigma in [0,2), split by how the jump
// map depends on (t,x) and by whether the jump operator applied to the
// initial datum is bounded (k_u0_finite):
//
//   sigma < 1            -> (time 1/2, space 1/2) for every dependence class
//   sigma = 1            -> (1/2, 1/2) with log flags on both
//   sigma in (1,2):
//     xt_dependent       -> ((2-s)/(2s), (2-s)/(2s))
//     x_only             -> (1/(2s),     (2-s)/(2s))
//     constant           -> (1/(2s),     (2-s)/2)
//   k_u0_finite upgrades the time exponent to 1/2 on the x_only and constant
//   branches; the space exponent never changes.
//
// Throws ConfigError outside sigma in [0,2).
RateExponents theoretical_rate(double sigma, EtaDependence dep, bool k_u0_finite);

// --------------------------------------------------------- time modulus

// Modulus controlling discrete time regularity |U^n - U^0| <= K w(t_n):
//   sigma in [0,1) : w(r) = r
//   sigma = 1      : w(r) = r (1 + |ln r|)   (guarded product form)
//   sigma in (1,2) : w(r) = r^{1/sigma}
// r <= 0 returns 0.
struct ModulusSpec {
  double sigma = 0.5;
  double operator()(double r) const;
};

// Fitted constant  max_{n >= 1, j} |U^n_j - U^0_j| / w(t_n)  over the stored
// slices (empty slices of resumed fields are skipped).
double time_regularity_constant(const SolutionField& field, const ModulusSpec& w);

// ---------------------------------------------------- high-accuracy oracle

// Compensated jump operator applied to a C^2 function at one point,
//   I[v](x) = int ( v(x + eta(z)) - v(x) - eta(z) . grad v(x) ) nu(dz),
// split at inner_radius: below it a second-order Taylor value
// 1/2 sum_ij hess_ij int_{|z|<r0} (eta eta^T)_ij nu(dz) on descending shells,
// above it nested Gauss-Legendre shells at tolerance tol -- a route
// independent of the midpoint quadrature the scheme itself uses.
double oracle_nonlocal_apply(const ControlProblem& p, double t, const Vec& x,
                             int a, int b,
                             const std::function<double(const Vec&)>& value,
                             const std::function<Vec(const Vec&)>& gradient,
                             const std::function<Mat(const Vec&)>& hessian,
                             double inner_radius = 1e-4, double tol = 1e-12);

// ----------------------------------------------------- manufactured source

// Smooth space-time target with the derivatives the source construction and
// the oracle need.
struct ManufacturedTarget {
  std::function<double(double, const Vec&)> value;
  std::function<double(double, const Vec&)> time_derivative;
  std::function<Vec(double, const Vec&)> gradient;
  std::function<Mat(double, const Vec&)> hessian;
};

// Returns a copy of the problem with the running cost replaced by
//   f := v_t + c v - b . grad v - I[v]        (per control pair)
// and the initial datum by v(0, .), making v the solution the scheme should
// approach.  Oracle values are memoised per (t, x, a, b); the solver calls
// the running cost only from its serial assembly phase, so the memo needs no
// locking.
ControlProblem manufactured_source(const ControlProblem& p,
                                   const ManufacturedTarget& v);

// -------------------------------------------------------------- rate studies

// How dt and the truncation radius shrink with dx across refinement levels:
//   dt    = dt_factor * dx^dt_power
//   delta = delta_factor * dx^delta_power      (manual rule, clamped to
//                                               [dx, 1] like every radius)
// or delta resolved per level by the named optimal rule.
struct CouplingRule {
  double dt_factor = 0.5;
  double dt_power = 1.0;
  DeltaRule delta_rule = DeltaRule::manual;
  double delta_factor = 1.0;
  double delta_power = 1.0;
};

enum class ReferenceMode { fine_grid, exact };

struct StudyConfig {
  int levels = 3;      // halvings of the base grid spacing; at least 3
  CouplingRule coupling;
  ReferenceMode reference = ReferenceMode::fine_grid;
  int fine_factor = 4; // reference spacing = finest dx / fine_factor,
                       // rounded up to a power of two so nodes align
  std::function<double(double, const Vec&)> exact;  // used in exact mode
  SchemeParams scheme; // theta / vartheta / correction / tolerances
  int threads = 1;
  std::ostream* log = nullptr;
};

struct RateRow {
  double dx = 0.0;
  double dt = 0.0;
  double delta = 0.0;
  double error = 0.0;  // interior sup error of the final slice
};

struct RateReport {
  std::vector<RateRow> rows;   // strictly decreasing dx
  double fitted_space = 0.0;   // least-squares slope of log error vs log dx
  double fitted_time = 0.0;    // slope vs log dt
  double residual = 0.0;       // rms regression residual in log space
  RateExponents theory;
  double combined_target = 0.0;  // min(space, time * dt_power): the slope a
                                 // coupled sweep can actually expose
  bool pass = false;
  bool degenerate = false;     // all errors below 1e-14 ("exact")
  std::string abort_reason;    // nonempty when a level failed to solve
};

// Solves the problem on `levels` halvings of the base grid, measures the
// interior sup error (|x|_inf <= box_radius / 2, final slice) against the
// reference -- a run at least fine_factor finer under the same coupling, or
// the exact callable -- fits log-log slopes in dx and dt, and passes iff
// fitted_space >= combined_target - 0.1 (or the study is degenerate).
// A solver failure at some level returns the partial report with
// abort_reason set instead of throwing.
RateReport refinement_study(const ControlProblem& p, const Grid& base,
                            const StudyConfig& cfg);

// CSV with header dx,dt,delta,error, one row per level, then '#' summary
// lines; and a human-readable table of the same report.
void write_rate_csv(const RateReport& r, const std::string& path);
std::string rate_table(const RateReport& r);

// ------------------------------------------------------- consistency orders

enum class Ingredient { truncation, drift, quadrature, local_correction };

struct SlopeReport {
  std::vector<double> xs;      // swept parameter (dx or delta)
  std::vector<double> errors;  // measured error, aligned with xs
  double slope = 0.0;
  double residual = 0.0;
  bool degenerate = false;     // all errors below 1e-14
};

// Measures one ingredient's discretisation error on a smooth test function
// and fits the slope in the swept parameter.  Expected slopes for order
// sigma:
//   truncation        sweep delta : |small-jump remainder|          2 - sigma
//   drift             sweep dx    : |upwind error of b~ . grad phi|     1
//   quadrature        sweep dx    : |tent quadrature - oracle|          2
//                                   (fixed radius fixed_delta)
//   local_correction  sweep delta : |remainder - 1/2 tr(a hess)|    3 - sigma
// Errors are maximised over a fixed set of off-symmetry points and use the
// control pair (0,0) at t = 0.
SlopeReport consistency_order(const ControlProblem& p, Ingredient ingredient,
                              const std::function<double(const Vec&)>& phi,
                              const std::function<Vec(const Vec&)>& grad_phi,
                              const std::function<Mat(const Vec&)>& hess_phi,
                              const std::vector<double>& sweep,
                              double fixed_delta = 0.25);

// --------------------------------------------------- truncation radius sweep

struct TruncationReport {
  std::vector<double> deltas;  // descending sweep
  std::vector<double> errors;  // interior sup distance to the reference run
  double slope = 0.0;
  double threshold = 0.0;      // (1 - sigma/2) - 0.1
  bool pass = false;
  bool degenerate = false;
};

// Solves on one fixed fine grid with each radius in the sweep and once with
// reference_delta (which must be smaller than the whole sweep), measures
// interior sup differences of the final slices, and fits the slope in delta;
// pass iff slope >= (1 - sigma/2) - 0.1.  Solver errors propagate.
TruncationReport truncation_distance(const ControlProblem& p, const Grid& fine,
                                     const SchemeParams& base,
                                     std::vector<double> deltas,
                                     double reference_delta, int threads = 1);

// ------------------------------------------------------------ shared fitting

// Least-squares slope of log y against log x plus the rms residual in log
// space.  Needs at least two pairs, xs positive; ys are floored at 1e-16 so
// exact zeros cannot poison the logs (degenerate data should be detected
// before fitting).
std::pair<double, double> fit_loglog_slope(const std::vector<double>& xs,
                                           const std::vector<double>& ys);

// Doubling-the-box check: solves on the given grid and on one with the box
// radius scaled by factor (same dx, dt, scheme), and returns the sup
// difference of the final slices over |x|_inf <= box_radius / 2 of the
// smaller box.  Quantifies the error induced by the boundary extension.
double domain_sensitivity(const ControlProblem& p, const Grid& g,
                          const SchemeParams& params, double factor = 2.0,
                          int threads = 1);

}  // namespace mdq
