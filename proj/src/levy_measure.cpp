#include "mdq/levy_measure.hpp"

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

namespace mdq {

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_sigma(double sigma) {
  if (!(sigma >= 0.0 && sigma < 2.0))
    throw ConfigError("measure order sigma must lie in [0,2), got " +
                      std::to_string(sigma));
}

// Smallest power of two strictly above x.
double next_pow2_above(double x) {
  double p = std::exp2(std::floor(std::log2(x)));
  while (p <= x) p *= 2.0;
  return p;
}

using AddFn = std::function<void(const Vec&, double, Vec&)>;

// One composite-midpoint pass over the annulus lo < |z| <= hi with n radial
// points.  1-D evaluates both signs so odd integrands cancel exactly; 2-D
// uses a radial x angular tensor grid with the same symmetry.
void eval_shell(const LevyMeasure& m, double lo, double hi, int n,
                const AddFn& add, Vec& out) {
  out.setZero();
  if (m.jump_dim == 1) {
    const double h = (hi - lo) / n;
    Vec z(1);
    for (int i = 0; i < n; ++i) {
      const double r = lo + (i + 0.5) * h;
      z(0) = r;
      add(z, h * m.density(z), out);
      z(0) = -r;
      add(z, h * m.density(z), out);
    }
  } else if (m.jump_dim == 2) {
    const int nr = std::max(n / 4, 8);
    const int nt = std::max(n / 2, 16);  // even, so antipodes cancel exactly
    const double hr = (hi - lo) / nr;
    const double ht = 2.0 * kPi / nt;
    Vec z(2);
    for (int ir = 0; ir < nr; ++ir) {
      const double r = lo + (ir + 0.5) * hr;
      for (int it = 0; it < nt; ++it) {
        const double th = (it + 0.5) * ht;
        z(0) = r * std::cos(th);
        z(1) = r * std::sin(th);
        add(z, hr * ht * r * m.density(z), out);
      }
    }
  } else {
    throw ConfigError("shell quadrature supports jump_dim 1 and 2, got " +
                      std::to_string(m.jump_dim));
  }
}

// Midpoint with deterministic point doubling until the shell stops moving.
Vec adaptive_shell(const LevyMeasure& m, double lo, double hi, int dim,
                   const AddFn& add, const QuadratureControl& q) {
  int n = q.base_points;
  Vec prev(dim), cur(dim);
  eval_shell(m, lo, hi, n, add, prev);
  for (int d = 0; d < q.max_doublings; ++d) {
    n *= 2;
    eval_shell(m, lo, hi, n, add, cur);
    const double diff = (cur - prev).lpNorm<Eigen::Infinity>();
    const double tol = std::max(q.shell_abs_tol,
                                q.shell_rel_tol * cur.lpNorm<Eigen::Infinity>());
    if (diff <= tol) return cur;
    prev = cur;
  }
  throw IntegrationError("shell [" + std::to_string(lo) + ", " + std::to_string(hi) +
                             "] did not converge within the doubling budget",
                         prev);
}

// Quadrature cutoff radius: built-in truncation, or where the tempering has
// decayed below the tail floor.
double cutoff_radius(const LevyMeasure& m, const QuadratureControl& q) {
  if (m.kind == MeasureKind::tempered_stable)
    return std::max(1.0, -std::log(q.tail_floor) / m.tempering);
  return m.tail_radius;
}

}  // namespace

LevyMeasure LevyMeasure::truncated_stable(double sigma, double intensity,
                                          int jump_dim) {
  check_sigma(sigma);
  if (intensity < 0.0) throw ConfigError("measure intensity must be nonnegative");
  if (jump_dim < 1) throw ConfigError("jump_dim must be positive");
  LevyMeasure m;
  m.sigma = sigma;
  m.jump_dim = jump_dim;
  m.kind = MeasureKind::truncated_stable;
  m.intensity = intensity;
  m.density_constant = intensity;
  m.tail_radius = 1.0;
  const double expo = jump_dim + sigma;
  m.density = [intensity, expo](const Vec& z) {
    const double r = z.norm();
    if (r <= 0.0 || r >= 1.0) return 0.0;
    return intensity * std::pow(r, -expo);
  };
  m.rho = [](const Vec& z) { return z.norm(); };
  return m;
}

LevyMeasure LevyMeasure::tempered_stable(double sigma, double intensity,
                                         double tempering, int jump_dim) {
  check_sigma(sigma);
  if (intensity < 0.0) throw ConfigError("measure intensity must be nonnegative");
  if (tempering <= 0.0) throw ConfigError("tempering rate must be positive");
  if (jump_dim < 1) throw ConfigError("jump_dim must be positive");
  LevyMeasure m;
  m.sigma = sigma;
  m.jump_dim = jump_dim;
  m.kind = MeasureKind::tempered_stable;
  m.intensity = intensity;
  m.tempering = tempering;
  m.density_constant = intensity;
  m.tail_radius = std::numeric_limits<double>::infinity();  // set per-call
  const double expo = jump_dim + sigma;
  m.density = [intensity, tempering, expo](const Vec& z) {
    const double r = z.norm();
    if (r <= 0.0) return 0.0;
    return intensity * std::exp(-tempering * r) * std::pow(r, -expo);
  };
  m.rho = [](const Vec& z) { return z.norm(); };
  return m;
}

LevyMeasure LevyMeasure::custom(double sigma, int jump_dim,
                                std::function<double(const Vec&)> density,
                                std::function<double(const Vec&)> rho,
                                double density_constant, double tail_radius) {
  check_sigma(sigma);
  if (jump_dim < 1) throw ConfigError("jump_dim must be positive");
  if (!density) throw ConfigError("custom measure needs a density");
  if (!(tail_radius >= 1.0) || !std::isfinite(tail_radius))
    throw ConfigError("custom measure needs a finite tail radius >= 1");
  LevyMeasure m;
  m.sigma = sigma;
  m.jump_dim = jump_dim;
  m.kind = MeasureKind::custom;
  m.density_constant = density_constant;
  m.tail_radius = tail_radius;
  m.density = std::move(density);
  m.rho = rho ? std::move(rho) : [](const Vec& z) { return z.norm(); };
  return m;
}

double unit_sphere_area(int dim) {
  return 2.0 * std::pow(kPi, 0.5 * dim) / std::tgamma(0.5 * dim);
}

double gamma_factor(double sigma, double delta) {
  check_sigma(sigma);
  if (!(delta > 0.0 && delta <= 1.0))
    throw ConfigError("gamma_factor needs delta in (0,1]");
  if (sigma > 1.0) return std::pow(delta, 1.0 - sigma);
  if (sigma == 1.0) return std::max(-std::log(delta), 1.0);
  return 1.0;
}

double truncated_mass(const LevyMeasure& m, double delta,
                      const QuadratureControl& q) {
  if (!(delta > 0.0)) throw ConfigError("truncated_mass needs delta > 0");
  if (m.kind == MeasureKind::truncated_stable) {
    if (delta >= 1.0) return 0.0;
    const double cs = m.intensity * unit_sphere_area(m.jump_dim);
    if (m.sigma == 0.0) return cs * (-std::log(delta));
    return cs * (std::pow(delta, -m.sigma) - 1.0) / m.sigma;
  }
  const Vec one = shell_integral(
      m, delta, 1, [](const Vec&, double w, Vec& acc) { acc(0) += w; }, q);
  return one(0);
}

double small_jump_second_moment(const LevyMeasure& m, double delta,
                                const QuadratureControl& q) {
  if (!(delta > 0.0)) throw ConfigError("small_jump_second_moment needs delta > 0");
  if (m.kind == MeasureKind::truncated_stable) {
    const double d = std::min(delta, 1.0);
    const double cs = m.intensity * unit_sphere_area(m.jump_dim);
    return cs * std::pow(d, 2.0 - m.sigma) / (2.0 - m.sigma);
  }
  const Vec r2 = complement_shell_integral(
      m, delta, [](const Vec& z) { return Vec::Constant(1, z.squaredNorm()); }, 1,
      q);
  return r2(0);
}

Vec shell_integral(const LevyMeasure& m, double delta, int out_dim,
                   const std::function<void(const Vec&, double, Vec&)>& add,
                   const QuadratureControl& q) {
  if (!(delta > 0.0)) throw ConfigError("shell_integral needs delta > 0");
  if (out_dim < 1) throw ConfigError("shell_integral needs out_dim >= 1");
  Vec total = Vec::Zero(out_dim);
  const double rmax = cutoff_radius(m, q);
  double lo = delta;
  while (lo < rmax) {
    const double hi = std::min(next_pow2_above(lo), rmax);
    total += adaptive_shell(m, lo, hi, out_dim, add, q);
    lo = hi;
  }
  return total;
}

Vec shell_integral(const LevyMeasure& m, double delta,
                   const std::function<Vec(const Vec&)>& f, int out_dim,
                   const QuadratureControl& q) {
  return shell_integral(
      m, delta, out_dim,
      [&f](const Vec& z, double w, Vec& acc) { acc += w * f(z); }, q);
}

Vec complement_shell_integral(const LevyMeasure& m, double delta,
                              const std::function<Vec(const Vec&)>& f, int out_dim,
                              const QuadratureControl& q, double decay_power) {
  if (!(delta > 0.0))
    throw ConfigError("complement_shell_integral needs delta > 0");
  if (out_dim < 1) throw ConfigError("complement_shell_integral needs out_dim >= 1");
  if (!(decay_power > m.sigma))
    throw ConfigError("complement integrand must vanish faster than |z|^sigma");
  const AddFn add = [&f](const Vec& z, double w, Vec& acc) { acc += w * f(z); };
  Vec total = Vec::Zero(out_dim);
  // Contributions of halving shells decay like (2^-k)^{decay_power - sigma}
  // near the origin, so the remainder below the last shell is bounded by a
  // geometric series.
  const double ratio = std::exp2(m.sigma - decay_power);
  const double rem_factor = ratio / (1.0 - ratio);
  // Nothing lives beyond the cutoff radius, so start the halving there.
  double hi = std::min(delta, cutoff_radius(m, q));
  for (int k = 0; k < 200; ++k) {
    const double lo = 0.5 * hi;
    const Vec shell = adaptive_shell(m, lo, hi, out_dim, add, q);
    total += shell;
    const double rem = shell.lpNorm<Eigen::Infinity>() * rem_factor;
    const double tol = std::max(q.tail_floor,
                                q.shell_rel_tol * total.lpNorm<Eigen::Infinity>());
    if (rem <= tol) return total;
    hi = lo;
  }
  throw IntegrationError("inner shells below delta did not converge", total);
}

namespace {

// n-point Gauss-Legendre nodes/weights on [-1,1] by Newton iteration on the
// Legendre recurrence; computed once per n.
const std::vector<std::pair<double, double>>& gl_rule(int n) {
  static std::vector<std::pair<double, double>> r32, r64;
  auto build = [](int m) {
    std::vector<std::pair<double, double>> rule(m);
    for (int i = 0; i < m; ++i) {
      double x = std::cos(kPi * (i + 0.75) / (m + 0.5));
      double dp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= m; ++k) {
          const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = m * (x * p1 - p0) / (x * x - 1.0);
        const double dx = p1 / dp;
        x -= dx;
        if (std::abs(dx) < 1e-15) break;
      }
      rule[i] = {x, 2.0 / ((1.0 - x * x) * dp * dp)};
    }
    return rule;
  };
  if (n == 32) {
    if (r32.empty()) r32 = build(32);
    return r32;
  }
  if (r64.empty()) r64 = build(64);
  return r64;
}

// One Gauss-Legendre pass over the annulus (1-D signs / 2-D periodic
// trapezoid in the angle, which is spectrally accurate).
void gl_eval_shell(const LevyMeasure& m, double lo, double hi, int n,
                   const std::function<Vec(const Vec&)>& f, Vec& out) {
  out.setZero();
  const auto& rule = gl_rule(n);
  const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
  if (m.jump_dim == 1) {
    Vec z(1);
    for (const auto& [xi, wi] : rule) {
      const double r = mid + half * xi;
      const double w = half * wi;
      z(0) = r;
      out += w * m.density(z) * f(z);
      z(0) = -r;
      out += w * m.density(z) * f(z);
    }
  } else if (m.jump_dim == 2) {
    const int nt = n;
    const double ht = 2.0 * kPi / nt;
    Vec z(2);
    for (const auto& [xi, wi] : rule) {
      const double r = mid + half * xi;
      for (int it = 0; it < nt; ++it) {
        const double th = (it + 0.5) * ht;
        z(0) = r * std::cos(th);
        z(1) = r * std::sin(th);
        out += half * wi * ht * r * m.density(z) * f(z);
      }
    }
  } else {
    throw ConfigError("oracle quadrature supports jump_dim 1 and 2");
  }
}

Vec gl_segment(const LevyMeasure& m, double lo, double hi,
               const std::function<Vec(const Vec&)>& f, int dim, double tol,
               int depth) {
  Vec fine(dim), coarse(dim);
  gl_eval_shell(m, lo, hi, 64, f, fine);
  gl_eval_shell(m, lo, hi, 32, f, coarse);
  const double diff = (fine - coarse).lpNorm<Eigen::Infinity>();
  // floor the local target at machine precision so isolated integrand kinks
  // get bisected away instead of chasing an unreachable tolerance
  const double target =
      std::max(tol, 1e-15 * (1.0 + fine.lpNorm<Eigen::Infinity>()));
  if (diff <= target || depth >= 40) {
    if (depth >= 40 && diff > target)
      throw IntegrationError("oracle shell refinement exhausted", fine);
    return fine;
  }
  const double mid = 0.5 * (lo + hi);
  return gl_segment(m, lo, mid, f, dim, 0.5 * tol, depth + 1) +
         gl_segment(m, mid, hi, f, dim, 0.5 * tol, depth + 1);
}

}  // namespace

Vec oracle_shell_integral(const LevyMeasure& m, double lo, double hi,
                          const std::function<Vec(const Vec&)>& f, int out_dim,
                          double tol) {
  if (!(lo > 0.0)) throw ConfigError("oracle_shell_integral needs lo > 0");
  QuadratureControl q;
  const double rmax = hi > 0.0 ? hi : cutoff_radius(m, q);
  Vec total = Vec::Zero(out_dim);
  double a = lo;
  while (a < rmax) {
    const double b = std::min(next_pow2_above(a), rmax);
    total += gl_segment(m, a, b, f, out_dim, tol, 0);
    a = b;
  }
  return total;
}

}  // namespace mdq
