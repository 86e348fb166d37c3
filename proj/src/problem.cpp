#include "mdq/problem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace mdq {

namespace {

std::string describe_point(double t, const Vec& x, int a, int b) {
  std::ostringstream os;
  os << "t=" << t << " x=(";
  for (int i = 0; i < x.size(); ++i) os << (i ? "," : "") << x(i);
  os << ") a=" << a << " b=" << b;
  return os.str();
}

// central-difference gradient of a scalar field
Vec fd_gradient(const std::function<double(const Vec&)>& g, const Vec& x,
                double h = 1e-5) {
  Vec grad(x.size());
  Vec xp = x, xm = x;
  for (int i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + h;
    xm(i) = x(i) - h;
    grad(i) = (g(xp) - g(xm)) / (2.0 * h);
    xp(i) = x(i);
    xm(i) = x(i);
  }
  return grad;
}

Mat fd_hessian(const std::function<double(const Vec&)>& g, const Vec& x,
               double h = 1e-4) {
  const int n = static_cast<int>(x.size());
  Mat hess(n, n);
  const double gx = g(x);
  Vec e = x;
  for (int i = 0; i < n; ++i) {
    e(i) = x(i) + h;
    const double gp = g(e);
    e(i) = x(i) - h;
    const double gm = g(e);
    e(i) = x(i);
    hess(i, i) = (gp - 2.0 * gx + gm) / (h * h);
    for (int j = i + 1; j < n; ++j) {
      Vec y = x;
      y(i) += h;
      y(j) += h;
      const double gpp = g(y);
      y(j) -= 2.0 * h;
      const double gpm = g(y);
      y(i) -= 2.0 * h;
      const double gmm = g(y);
      y(j) += 2.0 * h;
      const double gmp = g(y);
      hess(i, j) = hess(j, i) = (gpp - gpm - gmp + gmm) / (4.0 * h * h);
    }
  }
  return hess;
}

// true when the second difference of g fails to settle anywhere on a dense
// scan of the box (diagnoses kinks of piecewise-linear data)
bool second_difference_unstable(const std::function<double(const Vec&)>& g,
                                int dim, double box_radius, std::mt19937& rng) {
  auto unstable_at = [&](const Vec& x, int axis) {
    const double h = 1e-3;
    Vec xp = x, xm = x;
    auto d2 = [&](double hh) {
      xp(axis) = x(axis) + hh;
      xm(axis) = x(axis) - hh;
      const double v = (g(xp) - 2.0 * g(x) + g(xm)) / (hh * hh);
      xp(axis) = x(axis);
      xm(axis) = x(axis);
      return v;
    };
    const double c = d2(h), f = d2(0.5 * h);
    return std::abs(f - c) > 0.5 * std::max(1.0, std::abs(c));
  };
  if (dim == 1) {
    const int n = 4001;
    for (int i = 0; i < n; ++i) {
      Vec x = Vec::Constant(1, -box_radius + 2.0 * box_radius * i / (n - 1.0));
      if (unstable_at(x, 0)) return true;
    }
    return false;
  }
  std::uniform_real_distribution<double> u(-box_radius, box_radius);
  for (int s = 0; s < 4096; ++s) {
    Vec x(dim);
    for (int i = 0; i < dim; ++i) x(i) = u(rng);
    for (int axis = 0; axis < dim; ++axis)
      if (unstable_at(x, axis)) return true;
  }
  return false;
}

}  // namespace

ValidationReport validate_assumptions(const ControlProblem& p, int sample_count,
                                      double box_radius, unsigned seed) {
  if (sample_count < 2) throw ConfigError("need at least two samples");
  if (!p.running_cost || !p.discount || !p.drift || !p.jump || !p.initial)
    throw ConfigError("problem is missing a coefficient");
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> ux(-box_radius, box_radius);
  std::uniform_real_distribution<double> ut(0.0, p.horizon);

  std::vector<double> ts(sample_count);
  std::vector<Vec> xs(sample_count);
  for (int s = 0; s < sample_count; ++s) {
    ts[s] = ut(rng);
    xs[s] = Vec::NullaryExpr(p.dim, [&](Eigen::Index) { return ux(rng); });
  }

  // log-spaced jump sizes from deep inside the singularity out to the tail
  std::vector<Vec> zs;
  {
    const double zmax = std::isfinite(p.measure.tail_radius)
                            ? p.measure.tail_radius
                            : 4.0;
    std::uniform_real_distribution<double> uang(0.0, 2.0 * 3.14159265358979323846);
    for (int k = 0; k < 48; ++k) {
      const double r = std::pow(10.0, -6.0 + 6.0 * k / 47.0) * zmax;
      if (p.measure.jump_dim == 1) {
        zs.push_back(Vec::Constant(1, r));
        zs.push_back(Vec::Constant(1, -r));
      } else {
        for (int d = 0; d < 4; ++d) {
          const double th = uang(rng);
          Vec z(p.measure.jump_dim);
          z.setZero();
          z(0) = r * std::cos(th);
          z(1) = r * std::sin(th);
          zs.push_back(z);
        }
      }
    }
  }

  ValidationReport rep;
  auto push = [&rep](ValidationEntry e) {
    rep.all_pass = rep.all_pass && e.pass;
    rep.entries.push_back(std::move(e));
  };

  // --- A1: nonnegative discount -------------------------------------------
  {
    ValidationEntry e{"A1", true, std::numeric_limits<double>::infinity(), ""};
    for (int s = 0; s < sample_count; ++s)
      for (int a = 0; a < p.controls_a; ++a)
        for (int b = 0; b < p.controls_b; ++b) {
          const double c = p.discount(ts[s], xs[s], a, b);
          if (c < e.worst) {
            e.worst = c;
            if (c < 0.0 && e.pass) {
              e.pass = false;
              e.witness = describe_point(ts[s], xs[s], a, b);
            }
          }
        }
    push(std::move(e));
  }

  // --- A2: bounded + Lipschitz data within the declared constant ----------
  {
    ValidationEntry e{"A2", true, 0.0, ""};
    auto norm1 = [&](const std::function<double(double, const Vec&)>& g) {
      double sup = 0.0, lip = 0.0;
      for (int s = 0; s < sample_count; ++s) sup = std::max(sup, std::abs(g(ts[s], xs[s])));
      for (int s = 0; s + 1 < sample_count; ++s) {
        const double gap = (xs[s] - xs[s + 1]).norm();
        if (gap < 1e-12) continue;
        lip = std::max(lip, std::abs(g(ts[s], xs[s]) - g(ts[s], xs[s + 1])) / gap);
      }
      return sup + lip;
    };
    double total = norm1([&](double, const Vec& x) { return p.initial(x); });
    double worst_ab = 0.0;
    for (int a = 0; a < p.controls_a; ++a)
      for (int b = 0; b < p.controls_b; ++b) {
        double n = norm1([&](double t, const Vec& x) { return p.running_cost(t, x, a, b); });
        n += norm1([&](double t, const Vec& x) { return p.discount(t, x, a, b); });
        n += norm1([&](double t, const Vec& x) { return p.drift(t, x, a, b).norm(); });
        worst_ab = std::max(worst_ab, n);
      }
    total += worst_ab;
    e.worst = total;
    if (!(total <= p.lipschitz_bound * (1.0 + 1e-9))) {
      e.pass = false;
      e.witness = "sampled data norm exceeds the declared bound";
    }
    push(std::move(e));
  }

  // --- A3: jump map dominated by the envelope, Lipschitz in (t,x) ---------
  {
    ValidationEntry e{"A3", true, 0.0, ""};
    for (int s = 0; s < sample_count; ++s)
      for (int a = 0; a < p.controls_a; ++a)
        for (int b = 0; b < p.controls_b; ++b)
          for (const Vec& z : zs) {
            const double env = p.measure.rho(z);
            const double len = p.jump(ts[s], xs[s], a, b, z).norm();
            const double ratio = env > 0.0 ? len / env : (len > 1e-14 ? 2.0 : 0.0);
            if (ratio > e.worst) {
              e.worst = ratio;
              if (ratio > 1.0 + 1e-7 && e.pass) {
                e.pass = false;
                e.witness = describe_point(ts[s], xs[s], a, b) + " |z|=" +
                            std::to_string(z.norm());
              }
            }
          }
    for (int s = 0; s + 1 < sample_count; ++s)
      for (int a = 0; a < p.controls_a; ++a)
        for (int b = 0; b < p.controls_b; ++b)
          for (const Vec& z : zs) {
            const double env = p.measure.rho(z);
            const double gap = (xs[s] - xs[s + 1]).norm() + std::abs(ts[s] - ts[s + 1]);
            if (env <= 0.0 || gap < 1e-12) continue;
            const double diff = (p.jump(ts[s], xs[s], a, b, z) -
                                 p.jump(ts[s + 1], xs[s + 1], a, b, z))
                                    .norm();
            const double ratio = diff / (env * gap);
            if (ratio > e.worst) {
              e.worst = ratio;
              if (ratio > 1.0 + 1e-7 && e.pass) {
                e.pass = false;
                e.witness = "jump map moves faster than the envelope at " +
                            describe_point(ts[s], xs[s], a, b);
              }
            }
          }
    push(std::move(e));
  }

  // --- A4: envelope-squared tail is integrable -----------------------------
  {
    ValidationEntry e{"A4", true, 0.0, ""};
    const bool truncated_inside_one =
        p.measure.kind == MeasureKind::truncated_stable ||
        (std::isfinite(p.measure.tail_radius) && p.measure.tail_radius <= 1.0);
    if (!truncated_inside_one) {
      try {
        const Vec tail = shell_integral(
            p.measure, 1.0,
            [&](const Vec& z) {
              const double r = p.measure.rho(z);
              return Vec::Constant(1, r * r);
            },
            1);
        e.worst = tail(0);
        if (!std::isfinite(tail(0))) {
          e.pass = false;
          e.witness = "rho^2 tail integral is not finite";
        }
      } catch (const IntegrationError&) {
        e.pass = false;
        e.witness = "rho^2 tail integral did not converge";
      }
    }
    push(std::move(e));
  }

  // --- A5: density bounded by C |z|^{-M-sigma} near the origin ------------
  {
    ValidationEntry e{"A5", true, 0.0, ""};
    const double expo = p.measure.jump_dim + p.measure.sigma;
    for (const Vec& z : zs) {
      const double r = z.norm();
      if (r >= 1.0) continue;
      const double bound = p.measure.density_constant * std::pow(r, -expo);
      const double ratio = p.measure.density(z) / bound;
      if (ratio > e.worst) {
        e.worst = ratio;
        if (ratio > 1.0 + 1e-9 && e.pass) {
          e.pass = false;
          e.witness = "density exceeds C|z|^{-M-sigma} at |z|=" + std::to_string(r);
        }
      }
    }
    push(std::move(e));
  }

  // --- declared eta-dependence class actually holds ------------------------
  {
    ValidationEntry e{"eta_dependence", true, 0.0, ""};
    if (p.eta_dependence != EtaDependence::xt_dependent) {
      for (int s = 0; s + 1 < sample_count; ++s)
        for (int a = 0; a < p.controls_a; ++a)
          for (int b = 0; b < p.controls_b; ++b)
            for (const Vec& z : zs) {
              const Vec& xref = p.eta_dependence == EtaDependence::constant
                                    ? xs[s + 1]
                                    : xs[s];
              const double diff = (p.jump(ts[s], xs[s], a, b, z) -
                                   p.jump(ts[s + 1], xref, a, b, z))
                                      .norm();
              if (diff > e.worst) {
                e.worst = diff;
                if (diff > 1e-12 && e.pass) {
                  e.pass = false;
                  e.witness = "declared dependence class is too strong at " +
                              describe_point(ts[s], xs[s], a, b);
                }
              }
            }
    }
    push(std::move(e));
  }

  return rep;
}

ControlProblem canonical_problem(const std::string& name, double sigma,
                                 double intensity) {
  ControlProblem p;
  p.dim = 1;
  p.horizon = 1.0;
  const auto tent = [](const Vec& x) { return std::max(0.0, 1.0 - x.cwiseAbs().sum()); };
  const auto zero_scalar = [](double, const Vec&, int, int) { return 0.0; };
  const auto zero_vec = [](double, const Vec&, int, int) { return Vec::Zero(1); };

  if (name == "linear_advection") {
    p.measure = LevyMeasure::truncated_stable(sigma, 0.0);
    p.running_cost = zero_scalar;
    p.discount = zero_scalar;
    p.drift = [](double, const Vec&, int, int) { return Vec::Constant(1, 1.0); };
    p.jump = [](double, const Vec&, int, int, const Vec&) { return Vec::Zero(1); };
    p.initial = tent;
    p.lipschitz_bound = 4.0;
    return p;
  }
  if (name == "fractional_linear" || name == "smooth_u0_variant") {
    p.measure = LevyMeasure::truncated_stable(sigma, intensity);
    p.running_cost = zero_scalar;
    p.discount = zero_scalar;
    p.drift = zero_vec;
    p.jump = [](double, const Vec&, int, int, const Vec& z) { return z; };
    p.initial = name == "fractional_linear"
                    ? std::function<double(const Vec&)>(tent)
                    : [](const Vec& x) { return std::exp(-x.squaredNorm()); };
    p.lipschitz_bound = 4.0;
    return p;
  }
  if (name == "two_player_nonconvex") {
    p.controls_a = 2;
    p.controls_b = 2;
    p.measure = LevyMeasure::truncated_stable(sigma, intensity);
    // alpha, beta in {-1, +1}; the product structure makes inf-sup and
    // sup-inf genuinely different
    p.running_cost = [](double, const Vec&, int a, int b) {
      const double al = 2.0 * a - 1.0, be = 2.0 * b - 1.0;
      return al * be + 0.1 * al + 0.01 * be;
    };
    p.discount = [](double, const Vec&, int a, int) {
      return 0.05 * (2.0 + (2.0 * a - 1.0));
    };
    p.drift = [](double, const Vec&, int a, int b) {
      return Vec::Constant(1, 0.5 * (2.0 * a - 1.0) * (2.0 * b - 1.0));
    };
    p.jump = [](double, const Vec&, int, int, const Vec& z) { return 0.5 * z; };
    p.initial = tent;
    p.lipschitz_bound = 4.0;
    return p;
  }
  throw ConfigError("unknown canonical problem '" + name + "'");
}

KEstimate k_u0_estimate(const ControlProblem& p, KMode mode, double epsilon,
                        double box_radius) {
  if (!p.initial) throw ConfigError("problem has no initial datum");
  const double sigma = p.measure.sigma;
  std::mt19937 rng(20240801);
  const bool kinked =
      second_difference_unstable(p.initial, p.dim, box_radius, rng);

  // sup-norms of the derivatives from a dense scan plus random fill
  double sup_grad = 0.0, sup_hess = 0.0, sup_u0 = 0.0;
  std::vector<Vec> scan;
  if (p.dim == 1) {
    for (int i = 0; i < 4001; ++i)
      scan.push_back(Vec::Constant(1, -box_radius + 2.0 * box_radius * i / 4000.0));
  } else {
    std::uniform_real_distribution<double> u(-box_radius, box_radius);
    for (int s = 0; s < 4096; ++s)
      scan.push_back(Vec::NullaryExpr(p.dim, [&](Eigen::Index) { return u(rng); }));
  }
  for (const Vec& x : scan) {
    sup_u0 = std::max(sup_u0, std::abs(p.initial(x)));
    sup_grad = std::max(sup_grad, fd_gradient(p.initial, x).norm());
    if (!kinked)
      sup_hess = std::max(sup_hess,
                          fd_hessian(p.initial, x).cwiseAbs().maxCoeff() * p.dim);
  }

  if (mode == KMode::split_bound) {
    const auto rho2 = [&](const Vec& z) {
      const double r = p.measure.rho(z);
      return Vec::Constant(1, r * r);
    };
    const auto rho1 = [&](const Vec& z) {
      return Vec::Constant(1, p.measure.rho(z));
    };
    if (sigma < 1.0) {
      // 2 |Du0| int rho nu over everything
      const double inner = complement_shell_integral(p.measure, 1.0, rho1, 1,
                                                     {}, 1.0)(0);
      const double outer = shell_integral(p.measure, 1.0, rho1, 1)(0);
      return {true, 2.0 * sup_grad * (inner + outer)};
    }
    if (!(epsilon > 0.0))
      throw ConfigError("split_bound with sigma >= 1 needs epsilon > 0");
    if (kinked) return {false, std::numeric_limits<double>::infinity()};
    const double small = complement_shell_integral(p.measure, epsilon, rho2, 1)(0);
    const double large = shell_integral(p.measure, epsilon, rho1, 1)(0);
    return {true, 0.5 * sup_hess * small + 2.0 * sup_grad * large};
  }

  // direct mode
  if (kinked && sigma >= 1.0)
    return {false, std::numeric_limits<double>::infinity()};

  const double r0 = 1e-4;
  double worst = 0.0;
  std::uniform_real_distribution<double> u(-box_radius, box_radius);
  std::vector<Vec> pts;
  pts.push_back(Vec::Zero(p.dim));
  for (int s = 0; s < 63; ++s)
    pts.push_back(Vec::NullaryExpr(p.dim, [&](Eigen::Index) { return u(rng); }));
  for (const Vec& x : pts)
    for (int a = 0; a < p.controls_a; ++a)
      for (int b = 0; b < p.controls_b; ++b) {
        const Vec grad = fd_gradient(p.initial, x);
        const Vec outer = oracle_shell_integral(
            p.measure, r0, 0.0,
            [&](const Vec& z) {
              const Vec eta = p.jump(0.0, x, a, b, z);
              return Vec::Constant(
                  1, p.initial(x + eta) - p.initial(x) - eta.dot(grad));
            },
            1, 1e-10);
        double inner;
        if (!kinked) {
          const Mat hess = fd_hessian(p.initial, x);
          const int n = p.dim;
          const Vec outer_prod = complement_shell_integral(
              p.measure, r0,
              [&](const Vec& z) {
                const Vec eta = p.jump(0.0, x, a, b, z);
                Vec packed(n * n);
                for (int i = 0; i < n; ++i)
                  for (int j = 0; j < n; ++j) packed(i * n + j) = eta(i) * eta(j);
                return packed;
              },
              n * n);
          inner = 0.0;
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) inner += 0.5 * hess(i, j) * outer_prod(i * n + j);
          inner = std::abs(inner);
        } else {
          // kinked datum with sigma < 1: bound the small-jump part by the
          // Lipschitz constant
          inner = 2.0 * sup_grad *
                  complement_shell_integral(
                      p.measure, r0,
                      [&](const Vec& z) {
                        return Vec::Constant(1, p.measure.rho(z));
                      },
                      1, {}, 1.0)(0);
        }
        worst = std::max(worst, std::abs(outer(0)) + inner);
      }
  return {true, worst};
}

}  // namespace mdq
