#pragma once

// Time marching for the two-player scheme
//
//   U^n_j = U^{n-1}_j - dt inf_a sup_b { -f^{n-1} + c^n U^{n-1}_j
//           - theta  D[U^n]_j - (1-theta)  D[U^{n-1}]_j
//           - vartheta J[U^n]_j - (1-vartheta) J[U^{n-1}]_j },
//
// with D the upwind drift form and J the jump form built from the stencil
// module.  Under the small-jump diffusion correction the step is fully
// implicit with the running cost at t_n, the discount acting on U^n, and the
// extra Kushner-type form for a_delta = 1/2 int_{|z|<=delta} eta eta^T nu.
//
// Per node the scheme reads inf_a sup_b F(a,b) = 0 with
//   F(a,b) = A(a,b) U^n_j - [E(a,b) + I(a,b; U^n)],
//   A = 1 + dt (theta S_D + vartheta S_J)          (+ dt(c + S_diff) corrected)
// where E collects every known term and I the implicit off-diagonal ones.
// Each F is strictly increasing in U^n_j, so the root is
//   U^n_j = max_a min_b [E + I] / A,
// and the implicit system is solved by iterating exactly that map (Jacobi
// sweep, warm-started from U^{n-1}): it contracts in the sup norm with
// factor dt S / (1 + dt S) < 1 for any dt.  Convergence is certified by the
// actual scheme residual max_j |min_a max_b F_j|, not just the update size;
// the update threshold tightens itself until the residual passes.
//
// Monotonicity guards at every step: the coefficient of U^{n-1}_j must be
// nonnegative (this is the CFL condition, checked pointwise, not sampled)
// and every jump weight used must be nonnegative.  Violations throw
// MonotonicityError naming the node and time level.

#include <Eigen/Dense>

#include <iosfwd>
#include <string>
#include <vector>

#include "mdq/grid.hpp"
#include "mdq/problem.hpp"
#include "mdq/stencil.hpp"

namespace mdq {

class TimeStepper {
 public:
  TimeStepper(const ControlProblem& p, const Grid& g, const SchemeParams& params,
              int threads = 1, QuadratureControl q = {});
  ~TimeStepper();

  // Advance the slice at level time_index - 1 to level time_index.
  Vec advance(int time_index, const Vec& u_prev);

  double delta() const { return delta_; }
  int last_iterations() const { return last_iterations_; }
  double last_residual() const { return last_residual_; }
  StencilCache& cache() { return cache_; }

 private:
  struct NodeControl;  // per (node, control pair) data of one level

  void build_level(int n, const Vec& u_prev);
  Vec padded(const Vec& slice) const;
  double root(const NodeControl& d, const Vec& padded_cur,
              const Vec& cur) const;  // (E + I)/A
  void sweep(const Vec& cur, Vec& next, double* max_update,
             double* max_residual) const;

  const ControlProblem* p_;
  const Grid* g_;
  SchemeParams params_;
  int threads_;
  double delta_;
  StencilCache cache_;
  bool implicit_;
  int pad_ = 0;                 // dim == 1: halo width of the padded slice
  Vec exterior_left_, exterior_right_;  // initial-profile halo values
  std::vector<NodeControl> level_;      // node-major, control-minor
  int last_iterations_ = 0;
  double last_residual_ = 0.0;
};

struct SolveOptions {
  int threads = 1;
  bool store_all = true;          // keep every slice (false: final slice only)
  std::string checkpoint_path;    // empty: no checkpoints
  int checkpoint_every = 0;       // levels between checkpoint writes
  bool resume = false;            // restart from checkpoint_path
  std::ostream* log = nullptr;    // progress lines (about ten over the run)
};

// March from the initial datum to the horizon.  With store_all the returned
// field holds slices 0..steps (resumed runs leave pre-checkpoint slices
// empty); without it only the final slice.
SolutionField solve(const ControlProblem& p, const Grid& g,
                    const SchemeParams& params, const SolveOptions& opts = {});

}  // namespace mdq
