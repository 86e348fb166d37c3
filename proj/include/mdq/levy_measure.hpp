#pragma once

// Levy jump measures nu(dz) on R^M with fractional order sigma in [0,2),
// together with the radial shell quadrature every measure integral runs on.
//
// Built-in kinds:
//   truncated_stable : nu(dz) = intensity * 1_{|z|<1} |z|^{-M-sigma} dz
//   tempered_stable  : nu(dz) = intensity * exp(-tempering |z|) |z|^{-M-sigma} dz
//   custom           : caller-supplied density (and tail radius if untruncated)
//
// Integrals over {|z| > delta} split into dyadic shells [2^{-k-1}, 2^{-k}]
// down to delta, plus ascending tail shells for untruncated kinds out to the
// radius where the density has decayed below the tail floor.  Each shell uses
// a composite midpoint rule whose point count doubles deterministically until
// the shell stops moving; a shell that exhausts its doubling budget throws
// IntegrationError with the partial sum.  Quadrature supports jump_dim 1 and
// 2 (radial x angular); the closed forms work for any jump_dim.

#include <Eigen/Dense>

#include <functional>

#include "mdq/errors.hpp"

namespace mdq {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class MeasureKind { truncated_stable, tempered_stable, custom };

struct QuadratureControl {
  double shell_abs_tol = 1e-10;  // absolute per-shell tolerance
  double shell_rel_tol = 1e-8;   // relative per-shell escape
  int base_points = 64;          // midpoint points per shell before doubling
  int max_doublings = 14;
  double tail_floor = 1e-14;     // cut tails / inner shells below this
};

struct LevyMeasure {
  double sigma = 0.5;          // fractional order, in [0, 2)
  int jump_dim = 1;            // M
  MeasureKind kind = MeasureKind::truncated_stable;
  double intensity = 1.0;      // multiplicative constant of the density
  double tempering = 0.0;      // exponential tilt rate (tempered kind)
  double density_constant = 1.0;  // C with density(z) <= C |z|^{-M-sigma} near 0
  double tail_radius = 1.0;    // support radius (truncated) or quadrature cutoff
  std::function<double(const Vec&)> density;  // z != 0 -> nonnegative
  std::function<double(const Vec&)> rho;      // jump-size envelope for eta

  static LevyMeasure truncated_stable(double sigma, double intensity = 1.0,
                                      int jump_dim = 1);
  static LevyMeasure tempered_stable(double sigma, double intensity,
                                     double tempering, int jump_dim = 1);
  static LevyMeasure custom(double sigma, int jump_dim,
                            std::function<double(const Vec&)> density,
                            std::function<double(const Vec&)> rho,
                            double density_constant, double tail_radius);
};

// nu({|z| > delta}); closed form for the truncated-stable kind, shell
// quadrature otherwise.  Requires delta > 0.
double truncated_mass(const LevyMeasure& m, double delta,
                      const QuadratureControl& q = {});

// int_{|z| <= delta} |z|^2 nu(dz); closed form for the truncated-stable kind.
double small_jump_second_moment(const LevyMeasure& m, double delta,
                                const QuadratureControl& q = {});

// Gamma(sigma, delta): delta^{1-sigma} for sigma > 1, max(-log delta, 1) for
// sigma = 1, and 1 for sigma < 1.  Requires delta in (0, 1].
double gamma_factor(double sigma, double delta);

// int_{|z| > delta} f(z) nu(dz) for vector-valued f.
Vec shell_integral(const LevyMeasure& m, double delta,
                   const std::function<Vec(const Vec&)>& f, int out_dim,
                   const QuadratureControl& q = {});

// Same integral in accumulator form: add(z, w, acc) must do acc += w * f(z).
// Lets sparse integrands (tent weights touch two entries per z in 1-D) skip
// materialising a dense value vector at every quadrature point.
Vec shell_integral(const LevyMeasure& m, double delta, int out_dim,
                   const std::function<void(const Vec& z, double w, Vec& acc)>& add,
                   const QuadratureControl& q = {});

// int_{0 < |z| <= delta} f(z) nu(dz) by descending dyadic shells; needs
// |f(z)| = O(|z|^decay_power) near 0 with decay_power > sigma so the shell
// contributions decay geometrically.
Vec complement_shell_integral(const LevyMeasure& m, double delta,
                              const std::function<Vec(const Vec&)>& f, int out_dim,
                              const QuadratureControl& q = {},
                              double decay_power = 2.0);

// Surface area of the unit sphere in R^dim (2, 2*pi, 4*pi, ...).
double unit_sphere_area(int dim);

// High-accuracy engine for oracle integrals of smooth integrands:
// int_{lo < |z| <= hi} f(z) nu(dz) on dyadic shells with nested 64/32-point
// Gauss-Legendre rules, bisecting shells that disagree by more than tol.
// Pass hi = 0 to integrate out to the measure's cutoff radius.  This is a
// route independent of the midpoint engine the scheme itself runs on.
Vec oracle_shell_integral(const LevyMeasure& m, double lo, double hi,
                          const std::function<Vec(const Vec&)>& f, int out_dim,
                          double tol = 1e-12);

}  // namespace mdq
