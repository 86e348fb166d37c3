#include "mdq/stencil.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace mdq {

namespace {

constexpr double kWeightFloor = 1e-14;  // drop tent weights below this

// offsets are packed 21 bits per axis so maps iterate in a fixed order
long encode_offset(const IVec& o) {
  long key = 0;
  for (int i = static_cast<int>(o.size()) - 1; i >= 0; --i)
    key = (key << 21) | ((o(i) + (1 << 20)) & ((1 << 21) - 1));
  return key;
}

IVec decode_offset(long key, int dim) {
  IVec o(dim);
  for (int i = 0; i < dim; ++i) {
    o(i) = static_cast<int>(key & ((1 << 21) - 1)) - (1 << 20);
    key >>= 21;
  }
  return o;
}

using WeightMap = std::map<long, double>;

// scatter one jump destination onto the surrounding tent corners
void add_tent(WeightMap& acc, const Vec& eta, double w, double dx, int dim) {
  IVec base(dim);
  Vec frac(dim);
  for (int i = 0; i < dim; ++i) {
    const double s = eta(i) / dx;
    const double f = std::floor(s);
    base(i) = static_cast<int>(f);
    frac(i) = s - f;
  }
  IVec corner(dim);
  for (int mask = 0; mask < (1 << dim); ++mask) {
    double cw = 1.0;
    for (int i = 0; i < dim; ++i) {
      const bool hi = mask & (1 << i);
      corner(i) = base(i) + (hi ? 1 : 0);
      cw *= hi ? frac(i) : 1.0 - frac(i);
    }
    if (cw > 0.0) acc[encode_offset(corner)] += w * cw;
  }
}

// one midpoint pass of the tent-quadrature over an annulus
WeightMap eval_tent_shell(const ControlProblem& p, double t, const Vec& x,
                          int a, int b, double dx, double lo, double hi, int n) {
  WeightMap acc;
  const LevyMeasure& m = p.measure;
  if (m.jump_dim == 1) {
    const double h = (hi - lo) / n;
    Vec z(1);
    for (int i = 0; i < n; ++i) {
      const double r = lo + (i + 0.5) * h;
      for (double sign : {1.0, -1.0}) {
        z(0) = sign * r;
        const double w = h * m.density(z);
        if (w != 0.0) add_tent(acc, p.jump(t, x, a, b, z), w, dx, p.dim);
      }
    }
  } else if (m.jump_dim == 2) {
    const int nr = std::max(n / 4, 8);
    const int nt = std::max(n / 2, 16);
    const double hr = (hi - lo) / nr;
    const double ht = 2.0 * 3.14159265358979323846 / nt;
    Vec z(2);
    for (int ir = 0; ir < nr; ++ir) {
      const double r = lo + (ir + 0.5) * hr;
      for (int it = 0; it < nt; ++it) {
        const double th = (it + 0.5) * ht;
        z(0) = r * std::cos(th);
        z(1) = r * std::sin(th);
        const double w = hr * ht * r * m.density(z);
        if (w != 0.0) add_tent(acc, p.jump(t, x, a, b, z), w, dx, p.dim);
      }
    }
  } else {
    throw ConfigError("tent quadrature supports jump_dim 1 and 2");
  }
  return acc;
}

double map_diff(const WeightMap& fine, const WeightMap& coarse) {
  double diff = 0.0;
  auto it = coarse.begin();
  for (const auto& [k, v] : fine) {
    while (it != coarse.end() && it->first < k) {
      diff = std::max(diff, std::abs(it->second));
      ++it;
    }
    if (it != coarse.end() && it->first == k) {
      diff = std::max(diff, std::abs(v - it->second));
      ++it;
    } else {
      diff = std::max(diff, std::abs(v));
    }
  }
  for (; it != coarse.end(); ++it) diff = std::max(diff, std::abs(it->second));
  return diff;
}

double map_max(const WeightMap& m) {
  double v = 0.0;
  for (const auto& [k, w] : m) v = std::max(v, std::abs(w));
  return v;
}

Vec map_values(const WeightMap& m) {
  Vec v(static_cast<long>(m.size()));
  long i = 0;
  for (const auto& [k, w] : m) v(i++) = w;
  return v;
}

}  // namespace

double SchemeParams::resolve_delta(const Grid& g, double sigma) const {
  const double dx = g.dx;
  if (!(dx <= 1.0))
    throw ConfigError("jump truncation requires dx <= 1");
  if (delta_rule == DeltaRule::manual) {
    if (!(delta >= dx))
      throw ConfigError("truncation radius " + std::to_string(delta) +
                        " is below dx = " + std::to_string(dx));
    if (!(delta <= 1.0))
      throw ConfigError("truncation radius must not exceed 1");
    return delta;
  }
  double d = dx;
  if (sigma > 1.0) {
    const double inv = 1.0 / sigma;
    switch (delta_rule) {
      case DeltaRule::optimal_xt:
        d = std::max(std::pow(g.dt, inv), std::pow(dx, inv));
        break;
      case DeltaRule::optimal_x:
        d = std::pow(dx, inv);
        break;
      default:
        d = dx;
        break;
    }
  }
  return std::clamp(d, dx, 1.0);
}

DriftTerm effective_drift(const ControlProblem& p, double t, const Vec& x,
                          int a, int b, double delta,
                          const QuadratureControl& q) {
  DriftTerm out;
  out.b_delta = shell_integral(
      p.measure, delta, p.dim,
      [&](const Vec& z, double w, Vec& acc) { acc += w * p.jump(t, x, a, b, z); },
      q);
  out.b_tilde = p.drift(t, x, a, b) - out.b_delta;
  return out;
}

DriftWeights drift_weights(const Vec& b_tilde, double dx) {
  if (!(dx > 0.0)) throw ConfigError("drift weights need dx > 0");
  DriftWeights w;
  w.up = b_tilde.cwiseMax(0.0) / dx;
  w.down = (-b_tilde).cwiseMax(0.0) / dx;
  w.sum = w.up.sum() + w.down.sum();
  return w;
}

NonlocalWeights nonlocal_weights(const ControlProblem& p, const Grid& g,
                                 double t, const Vec& x, int a, int b,
                                 double delta, const QuadratureControl& q) {
  if (p.dim > 3) throw ConfigError("nonlocal stencils support dim <= 3");
  if (!(delta >= g.dx))
    throw ConfigError("truncation radius below dx in nonlocal_weights");
  WeightMap total;
  QuadratureControl qq = q;
  const double rmax = p.measure.kind == MeasureKind::tempered_stable
                          ? std::max(1.0, -std::log(qq.tail_floor) / p.measure.tempering)
                          : p.measure.tail_radius;
  double lo = delta;
  while (lo < rmax) {
    double hi = std::exp2(std::floor(std::log2(lo)));
    while (hi <= lo) hi *= 2.0;
    hi = std::min(hi, rmax);
    // midpoint doubling on the weight maps, same discipline as the scalar
    // shell engine
    int n = qq.base_points;
    WeightMap prev = eval_tent_shell(p, t, x, a, b, g.dx, lo, hi, n);
    bool accepted = false;
    for (int d = 0; d < qq.max_doublings; ++d) {
      n *= 2;
      WeightMap cur = eval_tent_shell(p, t, x, a, b, g.dx, lo, hi, n);
      const double diff = map_diff(cur, prev);
      const double tol =
          std::max(qq.shell_abs_tol, qq.shell_rel_tol * map_max(cur));
      prev = std::move(cur);
      if (diff <= tol) {
        accepted = true;
        break;
      }
    }
    if (!accepted)
      throw IntegrationError("tent quadrature shell did not converge",
                             map_values(total));
    for (const auto& [k, v] : prev) total[k] += v;
    lo = hi;
  }

  NonlocalWeights out;
  out.offsets.reserve(total.size());
  std::vector<double> ws;
  ws.reserve(total.size());
  for (const auto& [k, v] : total) {
    if (v < 0.0)
      throw MonotonicityError("negative jump weight assembled at offset key " +
                              std::to_string(k));
    if (v < kWeightFloor) continue;
    IVec o = decode_offset(k, p.dim);
    out.offsets.push_back(o);
    ws.push_back(v);
    out.sum += v;
    if (!o.isZero()) out.sum_off += v;
  }
  out.weights = Eigen::Map<Vec>(ws.data(), static_cast<long>(ws.size()));
  return out;
}

CflReport cfl_check(const ControlProblem& p, const Grid& g,
                    const SchemeParams& params, int sample_count,
                    unsigned seed) {
  const double delta = params.resolve_delta(g, p.measure.sigma);
  std::mt19937 rng(seed);
  std::uniform_int_distribution<long> unode(0, g.node_count() - 1);
  std::uniform_int_distribution<int> ustep(1, g.steps);
  CflReport rep;
  rep.worst = 0.0;
  double worst_load = 0.0;
  const bool eta_const = p.eta_dependence == EtaDependence::constant;
  std::map<int, double> kappa_cache;  // control pair -> sum_off when constant
  for (int s = 0; s < sample_count; ++s) {
    const long node = unode(rng);
    const int n = ustep(rng);
    const Vec x = g.point(node);
    const double t_prev = g.time(n - 1), t_cur = g.time(n);
    for (int a = 0; a < p.controls_a; ++a)
      for (int b = 0; b < p.controls_b; ++b) {
        const DriftTerm ed = effective_drift(p, t_prev, x, a, b, delta);
        const DriftWeights dw = drift_weights(ed.b_tilde, g.dx);
        double ksum;
        const int key = a * p.controls_b + b;
        if (eta_const && kappa_cache.count(key)) {
          ksum = kappa_cache[key];
        } else {
          ksum = nonlocal_weights(p, g, t_prev, x, a, b, delta).sum_off;
          if (eta_const) kappa_cache[key] = ksum;
        }
        const double c = p.discount(t_cur, x, a, b);
        const double load = (1.0 - params.theta) * dw.sum +
                            (1.0 - params.vartheta) * ksum +
                            (params.correction ? 0.0 : c);
        const double ratio = g.dt * load;
        if (ratio > rep.worst) {
          rep.worst = ratio;
          worst_load = load;
          std::ostringstream os;
          os << "node " << node << " step " << n << " a=" << a << " b=" << b;
          rep.where = os.str();
        }
      }
  }
  rep.satisfied = rep.worst <= 1.0 + 1e-12;
  rep.suggested_dt =
      worst_load > 0.0 ? 1.0 / worst_load : std::numeric_limits<double>::infinity();
  return rep;
}

StencilCache::StencilCache(const ControlProblem& p, const Grid& g, double delta,
                           QuadratureControl q, bool with_correction,
                           bool corrupt_first_weight)
    : p_(&p),
      g_(&g),
      delta_(delta),
      q_(q),
      with_correction_(with_correction),
      corrupt_first_weight_(corrupt_first_weight) {}

long StencilCache::key(int n, long node, int a, int b) const {
  const int nc = p_->controls_a * p_->controls_b;
  int n_eff = 0;
  long node_eff = 0;
  switch (p_->eta_dependence) {
    case EtaDependence::constant:
      break;
    case EtaDependence::x_only:
      node_eff = node;
      break;
    case EtaDependence::xt_dependent:
      n_eff = n;
      node_eff = node;
      break;
  }
  return (static_cast<long>(n_eff) * g_->node_count() + node_eff) * nc +
         (a * p_->controls_b + b);
}

const StencilWeights& StencilCache::get(int time_index, long node, int a, int b) {
  const long k = key(time_index, node, a, b);
  auto it = store_.find(k);
  if (it != store_.end()) return it->second;
  const bool constant = p_->eta_dependence == EtaDependence::constant;
  const double t =
      p_->eta_dependence == EtaDependence::xt_dependent ? g_->time(time_index) : 0.0;
  const Vec x = constant ? Vec::Zero(p_->dim) : g_->point(node);
  StencilWeights w;
  w.b_delta = shell_integral(
      p_->measure, delta_, p_->dim,
      [&](const Vec& z, double wq, Vec& acc) {
        acc += wq * p_->jump(t, x, a, b, z);
      },
      q_);
  w.jump = nonlocal_weights(*p_, *g_, t, x, a, b, delta_, q_);
  if (with_correction_) {
    const int d = p_->dim;
    Vec flat = complement_shell_integral(
        p_->measure, delta_,
        [&](const Vec& z) {
          const Vec e = p_->jump(t, x, a, b, z);
          Mat outer = 0.5 * e * e.transpose();
          return Vec(Eigen::Map<Vec>(outer.data(), d * d));
        },
        d * d, q_);
    w.a_delta = Eigen::Map<Mat>(flat.data(), d, d);
  }
  if (g_->dim == 1 && !w.jump.offsets.empty()) {
    int lo = w.jump.offsets.front()(0), hi = w.jump.offsets.back()(0);
    w.window_lo = lo;
    w.window = Vec::Zero(hi - lo + 1);
    for (std::size_t j = 0; j < w.jump.offsets.size(); ++j) {
      const int o = w.jump.offsets[j](0);
      if (o != 0) w.window(o - lo) = w.jump.weights(j);
    }
  }
  if (corrupt_first_weight_ && store_.empty() && w.jump.weights.size() > 0) {
    long worst;
    w.jump.weights.maxCoeff(&worst);
    w.jump.weights(worst) *= -1.0;
    const int o = w.jump.offsets[static_cast<std::size_t>(worst)](0);
    if (g_->dim == 1 && o != 0) w.window(o - w.window_lo) *= -1.0;
  }
  return store_.emplace(k, std::move(w)).first->second;
}

void StencilCache::retire_before(int time_index) {
  if (p_->eta_dependence != EtaDependence::xt_dependent) return;
  const int nc = p_->controls_a * p_->controls_b;
  const long cutoff = static_cast<long>(time_index) * g_->node_count() * nc;
  store_.erase(store_.begin(), store_.lower_bound(cutoff));
}

void write_stencil_csv(const Grid& g, const DriftWeights& drift,
                       const NonlocalWeights& jump, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  out << "kind";
  for (int i = 1; i <= g.dim; ++i) out << ",o" << i;
  out << ",weight\n";
  auto row = [&](const char* kind, const IVec& o, double w) {
    out << kind;
    for (int i = 0; i < g.dim; ++i) out << ',' << o(i);
    out << ',' << format_number(w) << '\n';
  };
  for (int i = 0; i < g.dim; ++i) {
    IVec o = IVec::Zero(g.dim);
    o(i) = 1;
    row("drift", o, drift.up(i));
    o(i) = -1;
    row("drift", o, drift.down(i));
  }
  for (std::size_t j = 0; j < jump.offsets.size(); ++j)
    row("jump", jump.offsets[j], jump.weights(j));
}

}  // namespace mdq
