#include "mdq/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mdq/errors.hpp"

namespace mdq {

namespace {

// Off-symmetry probe points for the ingredient measurements: symmetric
// placement against an even test function cancels leading error terms and
// fakes higher slopes.
constexpr double kProbePoints[] = {0.3, 0.7, -0.45};

// Below this every measured error counts as exactly zero (degenerate data).
constexpr double kDegenerateFloor = 1e-14;

QuadratureControl tight_quadrature() {
  QuadratureControl q;
  q.shell_abs_tol = 1e-13;
  q.shell_rel_tol = 1e-11;
  q.tail_floor = 1e-16;
  return q;
}

int next_pow2(int v) {
  int r = 1;
  while (r < v) r <<= 1;
  return r;
}

// 1/2 int_{|z| <= delta} eta eta^T nu(dz) at one point.  Product integrand,
// so no cancellation: safe on arbitrarily deep shells.
Mat half_second_moment(const ControlProblem& p, const Vec& x, double delta,
                       const QuadratureControl& q) {
  const int d = p.dim;
  auto f = [&](const Vec& z) -> Vec {
    Vec eta = p.jump(0.0, x, 0, 0, z);
    Mat m = eta * eta.transpose();
    return Vec(Eigen::Map<Vec>(m.data(), d * d));
  };
  Vec flat = complement_shell_integral(p.measure, delta, f, d * d, q, 2.0);
  return 0.5 * Eigen::Map<Mat>(flat.data(), d, d);
}

// Small-jump remainder  int_{|z| <= delta} ( phi(x+eta) - phi(x)
// - eta . grad phi(x) ) nu(dz)  at one point.  The integrand cancels
// catastrophically for tiny z (it shrinks like |z|^2 while the shell mass
// diverges), so below a split radius the stable second-order Taylor value
// replaces the direct difference; the band above it integrates the exact
// difference with a hard upper limit.
double small_jump_remainder(const ControlProblem& p, const Vec& x, double delta,
                            const std::function<double(const Vec&)>& phi,
                            const std::function<Vec(const Vec&)>& grad_phi,
                            const std::function<Mat(const Vec&)>& hess_phi,
                            const QuadratureControl& q) {
  const double split = std::min(0.5 * delta, 1e-4);
  double total =
      half_second_moment(p, x, split, q).cwiseProduct(hess_phi(x)).sum();
  const double px = phi(x);
  const Vec gx = grad_phi(x);
  auto f = [&](const Vec& z) -> Vec {
    Vec eta = p.jump(0.0, x, 0, 0, z);
    Vec out(1);
    out(0) = phi(x + eta) - px - eta.dot(gx);
    return out;
  };
  total += oracle_shell_integral(p.measure, split, delta, f, 1, 1e-11)(0);
  return total;
}

// Sup difference over the window |x|_inf <= band between a slice and a
// callable evaluated at the slice's nodes.
double interior_sup(const Grid& g, const Vec& u, double band,
                    const std::function<double(long, const IVec&)>& ref) {
  double worst = 0.0;
  for (long idx = 0; idx < g.node_count(); ++idx) {
    IVec j = g.unflatten(idx);
    bool in = true;
    for (int i = 0; i < g.dim && in; ++i)
      in = std::abs(j(i)) * g.dx <= band + 1e-12;
    if (!in) continue;
    worst = std::max(worst, std::abs(u(idx) - ref(idx, j)));
  }
  return worst;
}

// Per-level scheme parameters under a coupling rule.
SchemeParams level_params(const SchemeParams& base, const CouplingRule& c,
                          double dx) {
  SchemeParams sp = base;
  if (c.delta_rule == DeltaRule::manual) {
    sp.delta_rule = DeltaRule::manual;
    sp.delta = std::clamp(c.delta_factor * std::pow(dx, c.delta_power), dx, 1.0);
  } else {
    sp.delta_rule = c.delta_rule;
    sp.delta = 0.0;
  }
  return sp;
}

}  // namespace

// ---------------------------------------------------------------- rate table

RateExponents theoretical_rate(double sigma, EtaDependence dep,
                               bool k_u0_finite) {
  if (!(sigma >= 0.0 && sigma < 2.0))
    throw ConfigError("theoretical_rate: order must lie in [0,2), got " +
                      std::to_string(sigma));
  RateExponents r;
  if (sigma < 1.0) {
    r.branch = "order < 1";
    return r;  // (1/2, 1/2) for every dependence class
  }
  if (sigma == 1.0) {
    r.log_time = r.log_space = true;
    r.branch = "order = 1, log factors";
    return r;
  }
  const double s = sigma;
  switch (dep) {
    case EtaDependence::xt_dependent:
      r.time = (2.0 - s) / (2.0 * s);
      r.space = (2.0 - s) / (2.0 * s);
      r.branch = "order > 1, jump map depends on t and x";
      break;
    case EtaDependence::x_only:
      r.time = 1.0 / (2.0 * s);
      r.space = (2.0 - s) / (2.0 * s);
      r.branch = "order > 1, jump map depends on x";
      if (k_u0_finite) {
        r.time = 0.5;
        r.branch += ", bounded operator on the initial datum";
      }
      break;
    case EtaDependence::constant:
      r.time = 1.0 / (2.0 * s);
      r.space = (2.0 - s) / 2.0;
      r.branch = "order > 1, constant jump map";
      if (k_u0_finite) {
        r.time = 0.5;
        r.branch += ", bounded operator on the initial datum";
      }
      break;
  }
  return r;
}

// ------------------------------------------------------------- time modulus

double ModulusSpec::operator()(double r) const {
  if (r <= 0.0) return 0.0;
  if (sigma < 1.0) return r;
  if (sigma == 1.0) return r * (1.0 + std::abs(std::log(r)));
  return std::pow(r, 1.0 / sigma);
}

double time_regularity_constant(const SolutionField& field,
                                const ModulusSpec& w) {
  if (field.slices.size() < 2 || field.slices.front().size() == 0)
    throw ConfigError(
        "time_regularity_constant: need the initial slice plus at least one "
        "later slice");
  const Vec& u0 = field.slices.front();
  double k = 0.0;
  for (std::size_t n = 1; n < field.slices.size(); ++n) {
    const Vec& un = field.slices[n];
    if (un.size() == 0) continue;  // resumed fields skip early levels
    const double wn = w(field.grid.time(static_cast<int>(n)));
    if (wn <= 0.0) continue;
    k = std::max(k, (un - u0).lpNorm<Eigen::Infinity>() / wn);
  }
  return k;
}

// ------------------------------------------------------ high-accuracy oracle

double oracle_nonlocal_apply(const ControlProblem& p, double t, const Vec& x,
                             int a, int b,
                             const std::function<double(const Vec&)>& value,
                             const std::function<Vec(const Vec&)>& gradient,
                             const std::function<Mat(const Vec&)>& hessian,
                             double inner_radius, double tol) {
  if (inner_radius <= 0.0)
    throw ConfigError("oracle_nonlocal_apply: inner radius must be positive");
  const double vx = value(x);
  const Vec gx = gradient(x);
  auto outer = [&](const Vec& z) -> Vec {
    Vec eta = p.jump(t, x, a, b, z);
    Vec out(1);
    out(0) = value(x + eta) - vx - eta.dot(gx);
    return out;
  };
  double total =
      oracle_shell_integral(p.measure, inner_radius, 0.0, outer, 1, tol)(0);
  // Second-order Taylor value of the inner part; the remainder is of cubic
  // order in the inner radius and vanishes to leading order for symmetric
  // jump data.
  Mat smom = half_second_moment(p, x, inner_radius, tight_quadrature());
  total += smom.cwiseProduct(hessian(x)).sum();
  return total;
}

// ------------------------------------------------------- manufactured source

ControlProblem manufactured_source(const ControlProblem& p,
                                   const ManufacturedTarget& v) {
  if (!v.value || !v.time_derivative || !v.gradient || !v.hessian)
    throw ConfigError(
        "manufactured_source: target needs value, time derivative, gradient "
        "and hessian");
  ControlProblem out = p;
  const ControlProblem base = p;  // original coefficients feed the source
  const ManufacturedTarget tgt = v;
  auto memo = std::make_shared<std::map<std::vector<double>, double>>();
  out.running_cost = [base, tgt, memo](double t, const Vec& x, int a,
                                       int b) -> double {
    std::vector<double> key(static_cast<std::size_t>(x.size()) + 3);
    key[0] = t;
    for (int i = 0; i < x.size(); ++i) key[1 + i] = x(i);
    key[x.size() + 1] = a;
    key[x.size() + 2] = b;
    auto it = memo->find(key);
    if (it != memo->end()) return it->second;
    auto val = [&tgt, t](const Vec& y) { return tgt.value(t, y); };
    auto grad = [&tgt, t](const Vec& y) { return tgt.gradient(t, y); };
    auto hess = [&tgt, t](const Vec& y) { return tgt.hessian(t, y); };
    const double iv = oracle_nonlocal_apply(base, t, x, a, b, val, grad, hess);
    const double f = tgt.time_derivative(t, x) +
                     base.discount(t, x, a, b) * tgt.value(t, x) -
                     base.drift(t, x, a, b).dot(tgt.gradient(t, x)) - iv;
    (*memo)[key] = f;
    return f;
  };
  out.initial = [tgt](const Vec& x) { return tgt.value(0.0, x); };
  return out;
}

// --------------------------------------------------------------- rate studies

RateReport refinement_study(const ControlProblem& p, const Grid& base,
                            const StudyConfig& cfg) {
  if (cfg.levels < 3)
    throw ConfigError("refinement_study: need at least 3 levels");
  if (cfg.reference == ReferenceMode::exact && !cfg.exact)
    throw ConfigError("refinement_study: exact mode needs the exact callable");
  if (base.dim != p.dim)
    throw ConfigError("refinement_study: grid and problem dimension differ");

  RateReport rep;
  const double sigma = p.measure.sigma;
  rep.theory = theoretical_rate(sigma, p.eta_dependence,
                                k_u0_estimate(p, KMode::direct).finite);
  rep.combined_target =
      std::min(rep.theory.space, rep.theory.time * cfg.coupling.dt_power);

  SolveOptions so;
  so.threads = cfg.threads;
  so.store_all = false;
  so.log = cfg.log;

  std::vector<Grid> grids;
  std::vector<Vec> finals;
  for (int l = 0; l < cfg.levels; ++l) {
    const double dxl = base.dx / static_cast<double>(1 << l);
    const double dtl = cfg.coupling.dt_factor * std::pow(dxl, cfg.coupling.dt_power);
    Grid g = Grid::make(base.dim, dxl, base.box_radius(), dtl, base.horizon(),
                        base.extension);
    SchemeParams sp = level_params(cfg.scheme, cfg.coupling, dxl);
    if (cfg.log)
      *cfg.log << "[study] level " << l << " dx=" << format_number(dxl)
               << " dt=" << format_number(g.dt) << "\n";
    try {
      SolutionField f = solve(p, g, sp, so);
      finals.push_back(f.final());
      grids.push_back(g);
      rep.rows.push_back({dxl, g.dt, sp.resolve_delta(g, sigma), 0.0});
    } catch (const SolverError& e) {
      rep.abort_reason = e.what();
    } catch (const MonotonicityError& e) {
      rep.abort_reason = e.what();
    } catch (const IntegrationError& e) {
      rep.abort_reason = e.what();
    }
    if (!rep.abort_reason.empty()) return rep;
  }

  const double band = 0.5 * base.box_radius();
  if (cfg.reference == ReferenceMode::exact) {
    const double horizon = base.horizon();
    for (std::size_t l = 0; l < grids.size(); ++l) {
      const Grid& g = grids[l];
      rep.rows[l].error =
          interior_sup(g, finals[l], band, [&](long, const IVec& j) {
            return cfg.exact(horizon, g.point(j));
          });
    }
  } else {
    const int ff = next_pow2(std::max(4, cfg.fine_factor));
    const double dxr =
        base.dx / static_cast<double>((1 << (cfg.levels - 1)) * ff);
    const double dtr = cfg.coupling.dt_factor * std::pow(dxr, cfg.coupling.dt_power);
    Grid gr = Grid::make(base.dim, dxr, base.box_radius(), dtr, base.horizon(),
                         base.extension);
    SchemeParams spr = level_params(cfg.scheme, cfg.coupling, dxr);
    if (cfg.log)
      *cfg.log << "[study] reference dx=" << format_number(dxr)
               << " dt=" << format_number(gr.dt) << "\n";
    Vec ref;
    try {
      ref = solve(p, gr, spr, so).final();
    } catch (const SolverError& e) {
      rep.abort_reason = e.what();
    } catch (const MonotonicityError& e) {
      rep.abort_reason = e.what();
    } catch (const IntegrationError& e) {
      rep.abort_reason = e.what();
    }
    if (!rep.abort_reason.empty()) return rep;
    for (std::size_t l = 0; l < grids.size(); ++l) {
      const Grid& g = grids[l];
      const long ratio = (1L << (cfg.levels - 1 - static_cast<long>(l))) * ff;
      rep.rows[l].error =
          interior_sup(g, finals[l], band, [&](long, const IVec& j) {
            IVec jr = j * static_cast<int>(ratio);
            return ref(gr.flatten(jr));
          });
    }
  }

  rep.degenerate =
      std::all_of(rep.rows.begin(), rep.rows.end(),
                  [](const RateRow& r) { return r.error < kDegenerateFloor; });
  if (rep.degenerate) {
    rep.pass = true;
    return rep;
  }
  std::vector<double> dxs, dts, errs;
  for (const RateRow& r : rep.rows) {
    dxs.push_back(r.dx);
    dts.push_back(r.dt);
    errs.push_back(r.error);
  }
  auto [slope_x, res] = fit_loglog_slope(dxs, errs);
  rep.fitted_space = slope_x;
  rep.residual = res;
  rep.fitted_time = fit_loglog_slope(dts, errs).first;
  rep.pass = rep.fitted_space >= rep.combined_target - 0.1;
  return rep;
}

void write_rate_csv(const RateReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("write_rate_csv: cannot open " + path);
  out << "dx,dt,delta,error\n";
  for (const RateRow& row : r.rows)
    out << format_number(row.dx) << ',' << format_number(row.dt) << ','
        << format_number(row.delta) << ',' << format_number(row.error) << '\n';
  out << "# fitted_space=" << format_number(r.fitted_space)
      << " fitted_time=" << format_number(r.fitted_time)
      << " residual=" << format_number(r.residual) << '\n';
  out << "# theory_time=" << format_number(r.theory.time)
      << " theory_space=" << format_number(r.theory.space)
      << " combined_target=" << format_number(r.combined_target) << " branch=\""
      << r.theory.branch << "\"\n";
  out << "# "
      << (r.degenerate ? "degenerate: exact" : (r.pass ? "pass" : "fail"));
  if (!r.abort_reason.empty()) out << " aborted: " << r.abort_reason;
  out << '\n';
}

std::string rate_table(const RateReport& r) {
  std::ostringstream os;
  os << "          dx            dt         delta      sup error\n";
  char line[256];
  for (const RateRow& row : r.rows) {
    std::snprintf(line, sizeof line, "  %10.4e  %10.4e  %10.4e  %13.6e\n",
                  row.dx, row.dt, row.delta, row.error);
    os << line;
  }
  std::snprintf(line, sizeof line,
                "  fitted: space %.4f  time %.4f  (rms residual %.3f)\n",
                r.fitted_space, r.fitted_time, r.residual);
  os << line;
  std::snprintf(line, sizeof line,
                "  theory: time %.4f%s  space %.4f%s  combined target %.4f\n",
                r.theory.time, r.theory.log_time ? " (log)" : "",
                r.theory.space, r.theory.log_space ? " (log)" : "",
                r.combined_target);
  os << line;
  os << "  branch: " << r.theory.branch << '\n';
  if (r.degenerate) os << "  degenerate: exact\n";
  if (!r.abort_reason.empty()) os << "  aborted: " << r.abort_reason << '\n';
  os << (r.pass ? "  PASS" : "  FAIL") << '\n';
  return os.str();
}

// --------------------------------------------------------- consistency orders

SlopeReport consistency_order(const ControlProblem& p, Ingredient ingredient,
                              const std::function<double(const Vec&)>& phi,
                              const std::function<Vec(const Vec&)>& grad_phi,
                              const std::function<Mat(const Vec&)>& hess_phi,
                              const std::vector<double>& sweep,
                              double fixed_delta) {
  if (sweep.size() < 2)
    throw ConfigError("consistency_order: sweep needs at least two values");
  if (!phi || !grad_phi || !hess_phi)
    throw ConfigError("consistency_order: need phi and its derivatives");
  const int d = p.dim;
  const QuadratureControl q = tight_quadrature();

  std::vector<Vec> pts;
  for (double s : kProbePoints) pts.push_back(Vec::Constant(d, s));

  SlopeReport rep;
  rep.xs = sweep;
  for (double h : sweep) {
    double worst = 0.0;
    for (const Vec& x : pts) {
      double e = 0.0;
      switch (ingredient) {
        case Ingredient::truncation:
          e = std::abs(small_jump_remainder(p, x, h, phi, grad_phi, hess_phi, q));
          break;
        case Ingredient::drift: {
          const Vec bt =
              effective_drift(p, 0.0, x, 0, 0, fixed_delta, q).b_tilde;
          const double exact = bt.dot(grad_phi(x));
          double fd = 0.0;
          for (int i = 0; i < d; ++i) {
            Vec ei = Vec::Zero(d);
            ei(i) = h;
            fd += std::max(bt(i), 0.0) * (phi(x + ei) - phi(x)) / h +
                  std::max(-bt(i), 0.0) * (phi(x - ei) - phi(x)) / h;
          }
          e = std::abs(exact - fd);
          break;
        }
        case Ingredient::quadrature: {
          if (h > fixed_delta)
            throw ConfigError(
                "consistency_order: quadrature spacing above the fixed "
                "radius");
          Grid g = Grid::make(d, h, 1.0, 0.1, 0.1);
          Vec xs = x;  // snap to a node so the tent nodes are exact points
          for (int i = 0; i < d; ++i) xs(i) = std::round(x(i) / h) * h;
          // scheme-side weights run on the scheme's own quadrature control;
          // the kinked tent integrand cannot meet the oracle tolerances
          NonlocalWeights nw = nonlocal_weights(p, g, 0.0, xs, 0, 0,
                                                fixed_delta, QuadratureControl{});
          const double pxs = phi(xs);
          double quad = 0.0;
          for (std::size_t k = 0; k < nw.offsets.size(); ++k)
            quad += nw.weights(static_cast<long>(k)) *
                    (phi(xs + nw.offsets[k].cast<double>() * h) - pxs);
          auto f = [&](const Vec& z) -> Vec {
            Vec eta = p.jump(0.0, xs, 0, 0, z);
            Vec out(1);
            out(0) = phi(xs + eta) - pxs;
            return out;
          };
          const double exact =
              oracle_shell_integral(p.measure, fixed_delta, 0.0, f, 1, 1e-12)(0);
          e = std::abs(quad - exact);
          break;
        }
        case Ingredient::local_correction: {
          const Mat a_mat = half_second_moment(p, x, h, q);
          e = std::abs(small_jump_remainder(p, x, h, phi, grad_phi, hess_phi, q) -
                       a_mat.cwiseProduct(hess_phi(x)).sum());
          break;
        }
      }
      worst = std::max(worst, e);
    }
    rep.errors.push_back(worst);
  }
  rep.degenerate =
      std::all_of(rep.errors.begin(), rep.errors.end(),
                  [](double v) { return v < kDegenerateFloor; });
  if (!rep.degenerate) {
    auto [s, res] = fit_loglog_slope(rep.xs, rep.errors);
    rep.slope = s;
    rep.residual = res;
  }
  return rep;
}

// ----------------------------------------------------- truncation radius sweep

TruncationReport truncation_distance(const ControlProblem& p, const Grid& fine,
                                     const SchemeParams& base,
                                     std::vector<double> deltas,
                                     double reference_delta, int threads) {
  if (deltas.size() < 2)
    throw ConfigError("truncation_distance: sweep needs at least two radii");
  std::sort(deltas.begin(), deltas.end(), std::greater<>());
  if (reference_delta >= deltas.back())
    throw ConfigError(
        "truncation_distance: reference radius must lie below the sweep");

  TruncationReport rep;
  rep.deltas = deltas;
  rep.threshold = (1.0 - 0.5 * p.measure.sigma) - 0.1;

  SolveOptions so;
  so.threads = threads;
  so.store_all = false;

  SchemeParams sp = base;
  sp.delta_rule = DeltaRule::manual;
  sp.delta = reference_delta;
  const Vec ref = solve(p, fine, sp, so).final();

  const double band = 0.5 * fine.box_radius();
  for (double dlt : deltas) {
    sp.delta = dlt;
    const Vec u = solve(p, fine, sp, so).final();
    rep.errors.push_back(interior_sup(
        fine, u, band, [&](long idx, const IVec&) { return ref(idx); }));
  }
  rep.degenerate =
      std::all_of(rep.errors.begin(), rep.errors.end(),
                  [](double v) { return v < kDegenerateFloor; });
  if (rep.degenerate) {
    rep.pass = true;
    return rep;
  }
  rep.slope = fit_loglog_slope(rep.deltas, rep.errors).first;
  rep.pass = rep.slope >= rep.threshold;
  return rep;
}

// -------------------------------------------------------------- shared fitting

std::pair<double, double> fit_loglog_slope(const std::vector<double>& xs,
                                           const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw ConfigError(
        "fit_loglog_slope: need matching lists with at least two points");
  const int n = static_cast<int>(xs.size());
  Mat A(n, 2);
  Vec rhs(n);
  for (int i = 0; i < n; ++i) {
    if (xs[i] <= 0.0)
      throw ConfigError("fit_loglog_slope: abscissae must be positive");
    A(i, 0) = std::log(xs[i]);
    A(i, 1) = 1.0;
    rhs(i) = std::log(std::max(ys[i], 1e-16));
  }
  Vec beta = A.colPivHouseholderQr().solve(rhs);
  const double rms = std::sqrt((A * beta - rhs).squaredNorm() / n);
  return {beta(0), rms};
}

double domain_sensitivity(const ControlProblem& p, const Grid& g,
                          const SchemeParams& params, double factor,
                          int threads) {
  if (factor <= 1.0)
    throw ConfigError("domain_sensitivity: factor must exceed 1");
  Grid big = Grid::make(g.dim, g.dx, g.box_radius() * factor, g.dt,
                        g.horizon(), g.extension);
  SolveOptions so;
  so.threads = threads;
  so.store_all = false;
  const Vec small_u = solve(p, g, params, so).final();
  const Vec big_u = solve(p, big, params, so).final();
  return interior_sup(g, small_u, 0.5 * g.box_radius(),
                      [&](long, const IVec& j) { return big_u(big.flatten(j)); });
}

}  // namespace mdq
