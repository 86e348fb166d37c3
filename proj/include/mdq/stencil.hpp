#pragma once

// Scheme ingredients evaluated at one (t, x, control pair):
//
//   effective drift  b_tilde = b(t,x) - int_{|z|>delta} eta(t,x;z) nu(dz),
//   upwind weights   d_{+e_i} = (b_tilde_i)^+ / dx,  d_{-e_i} = (b_tilde_i)^- / dx,
//   jump weights     kappa_j = int_{|z|>delta} tent_j(eta(t,x;z)) nu(dz) >= 0,
//
// plus the CFL bound of the explicit part and a weight cache keyed by the
// declared eta-dependence class.  delta below dx is rejected: the tent
// quadrature needs every surviving jump to clear at least one cell.

#include <Eigen/Dense>

#include <map>
#include <string>
#include <vector>

#include "mdq/grid.hpp"
#include "mdq/levy_measure.hpp"
#include "mdq/problem.hpp"

namespace mdq {

enum class DeltaRule { manual, optimal_xt, optimal_x, optimal_constant };

struct SchemeParams {
  double theta = 0.0;     // implicit fraction of the drift part
  double vartheta = 0.0;  // implicit fraction of the jump part
  DeltaRule delta_rule = DeltaRule::manual;
  double delta = 0.0;     // truncation radius for the manual rule
  double fixed_point_tol = 1e-10;
  int fixed_point_max_iter = 10000;
  bool correction = false;  // small-jump diffusion correction (implicit only)
  bool inject_negative_weight = false;  // test hook for the coefficient guard

  // Resolve the truncation radius against a grid.  The optimal_* rules pick
  // the radius the convergence analysis optimises; every result is clamped
  // into [dx, 1] and a manual radius outside that range is an error.
  double resolve_delta(const Grid& g, double sigma) const;
};

struct DriftTerm {
  Vec b_delta;  // int_{|z|>delta} eta nu(dz)
  Vec b_tilde;  // problem drift minus b_delta
};

DriftTerm effective_drift(const ControlProblem& p, double t, const Vec& x,
                          int a, int b, double delta,
                          const QuadratureControl& q = {});

struct DriftWeights {
  Vec up;      // weight on +e_i
  Vec down;    // weight on -e_i
  double sum;  // sum of all drift weights
};

DriftWeights drift_weights(const Vec& b_tilde, double dx);

struct NonlocalWeights {
  std::vector<IVec> offsets;  // multi-index offsets, ascending encoded order
  Vec weights;                // kappa_j, aligned with offsets
  double sum = 0.0;           // sum over all offsets (partition of the mass)
  double sum_off = 0.0;       // sum over offsets j != 0 (enters CFL/coefficients)
};

// Tent-function quadrature of the jump measure; throws MonotonicityError if
// any weight comes out negative (cannot happen without a fault).
NonlocalWeights nonlocal_weights(const ControlProblem& p, const Grid& g,
                                 double t, const Vec& x, int a, int b,
                                 double delta, const QuadratureControl& q = {});

// Everything the stepper caches per (node, control) pair.  In one dimension
// the jump weights are additionally laid out as a dense window (offsets
// window_lo .. window_lo + window.size() - 1) with the center entry zeroed,
// so applying the operator is one contiguous dot product; the sparse list
// keeps the full weights, center included.  a_delta is filled only when the
// cache is built for the small-jump diffusion correction:
//   a_delta = 1/2 int_{|z| <= delta} eta eta^T nu(dz).
struct StencilWeights {
  Vec b_delta;
  NonlocalWeights jump;
  Vec window;         // dim == 1 only; application layout
  int window_lo = 0;
  Mat a_delta;        // correction runs only
};

struct CflReport {
  bool satisfied = true;
  double worst = 0.0;         // max of dt * (explicit weight sum + discount)
  double suggested_dt = 0.0;  // largest stable dt at the worst sample
  std::string where;
};

// Samples nodes and time levels over all control pairs and bounds the
// explicit part:  dt [ (1-theta) sum d + (1-vartheta) sum kappa + c ] <= 1.
// The discount term drops out under the corrected scheme (it is implicit
// there).  Weight sums are the actually assembled ones, never a formula.
CflReport cfl_check(const ControlProblem& p, const Grid& g,
                    const SchemeParams& params, int sample_count = 16,
                    unsigned seed = 42);

// Weight cache keyed by the declared eta-dependence class: constant keeps
// one stencil per control pair, x_only one per (node, control), xt_dependent
// one per (time level, node, control) with retirement of spent levels.
// with_correction also assembles a_delta per entry.  corrupt_first_weight is
// a fault-injection hook: it flips the sign of the largest jump weight of
// the first assembled stencil so the stepper's nonnegativity guard can be
// exercised end to end.
class StencilCache {
 public:
  StencilCache(const ControlProblem& p, const Grid& g, double delta,
               QuadratureControl q = {}, bool with_correction = false,
               bool corrupt_first_weight = false);

  const StencilWeights& get(int time_index, long node, int a, int b);
  void retire_before(int time_index);  // free xt-dependent levels < time_index
  std::size_t size() const { return store_.size(); }

 private:
  const ControlProblem* p_;
  const Grid* g_;
  double delta_;
  QuadratureControl q_;
  bool with_correction_;
  bool corrupt_first_weight_;
  std::map<long, StencilWeights> store_;
  long key(int n, long node, int a, int b) const;
};

// Diagnostic dump: kind,o1..oN,weight rows for the drift and jump parts.
void write_stencil_csv(const Grid& g, const DriftWeights& drift,
                       const NonlocalWeights& jump, const std::string& path);

}  // namespace mdq
