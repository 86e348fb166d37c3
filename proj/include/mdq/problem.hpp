#pragma once

// Two-player control problem data for the nonlocal equation
//
//   u_t + inf_a sup_b { -f(t,x) + c(t,x) u - b(t,x).Du - J[u](t,x) } = 0
//   u(0,x) = u0(x),
//
// where J applies the compensated jump operator with jump map eta and Levy
// measure nu.  Control sets are finite index ranges; all coefficients are
// callables of (t, x, a, b).
//
// Assumption checks (sampled, deterministic):
//   A1  discount c >= 0
//   A2  u0, f, c, b bounded and Lipschitz in x within the declared constant
//   A3  |eta| <= rho(z) and eta Lipschitz in (t,x) with envelope rho
//   A4  rho-tail integrability of the measure
//   A5  density bounded by C |z|^{-M-sigma} near the origin
// plus a consistency check of the declared eta dependence class.

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

#include "mdq/levy_measure.hpp"

namespace mdq {

enum class EtaDependence { xt_dependent, x_only, constant };

struct ControlProblem {
  int dim = 1;          // spatial dimension N
  int controls_a = 1;   // first (inf) player index range
  int controls_b = 1;   // second (sup) player index range
  double horizon = 1.0;
  double lipschitz_bound = 4.0;  // declared K bounding the data norms
  LevyMeasure measure;
  EtaDependence eta_dependence = EtaDependence::constant;

  std::function<double(double, const Vec&, int, int)> running_cost;  // f
  std::function<double(double, const Vec&, int, int)> discount;      // c
  std::function<Vec(double, const Vec&, int, int)> drift;            // b
  std::function<Vec(double, const Vec&, int, int, const Vec&)> jump; // eta
  std::function<double(const Vec&)> initial;                         // u0
};

struct ValidationEntry {
  std::string assumption;  // "A1".."A5", "eta_dependence"
  bool pass = true;
  double worst = 0.0;      // worst sampled quantity for the check
  std::string witness;     // offending sample, empty when passing
};

struct ValidationReport {
  std::vector<ValidationEntry> entries;
  bool all_pass = true;
};

// Samples (t, x, a, b, z) tuples with a fixed-seed generator and evaluates
// every assumption; never throws on a failing assumption (the report says).
ValidationReport validate_assumptions(const ControlProblem& p, int sample_count,
                                      double box_radius = 2.0,
                                      unsigned seed = 42);

// Named baseline problems (1-D):
//   linear_advection     constant drift, no jumps; transport sanity check
//   fractional_linear    pure jump, eta(z) = z, truncated-stable measure
//   two_player_nonconvex 2x2 game with a genuine inf-sup / sup-inf gap
//   smooth_u0_variant    fractional_linear with a Gaussian initial datum
ControlProblem canonical_problem(const std::string& name, double sigma = 0.5,
                                 double intensity = 1.0);

enum class KMode { direct, split_bound };

// Estimate of the nonlocal bound K(u0) = sup_{x,a,b} |J[u0](0,x)|.
// finite == false marks problems whose datum lacks the second derivatives
// the current sigma needs (the value is then meaningless).
struct KEstimate {
  bool finite = true;
  double value = 0.0;
};

// mode direct: evaluate J[u0] on sampled points (kinked u0 with sigma >= 1
// yields the infinite marker).  mode split_bound: the split-estimate
//   sigma > 1 : 1/2 |D2u0| int_{|z|<eps} rho^2 nu + 2 |Du0| int_{|z|>eps} rho nu
//   sigma < 1 : 2 |Du0| int rho nu   (eps unused)
// with sampled sup-norms of the derivatives.
KEstimate k_u0_estimate(const ControlProblem& p, KMode mode, double epsilon = 0.0,
                        double box_radius = 2.0);

}  // namespace mdq
