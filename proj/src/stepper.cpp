#include "mdq/stepper.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>
#include <thread>

namespace mdq {

namespace {

constexpr double kDiagTol = 1e-10;  // tolerance on the explicit diagonal sign

// clamp a multi-index to the box (constant_nearest policy)
IVec clamp_index(const Grid& g, IVec j) {
  for (int i = 0; i < g.dim; ++i)
    j(i) = std::clamp(j(i), -g.half_nodes, g.half_nodes);
  return j;
}

}  // namespace

struct TimeStepper::NodeControl {
  double E = 0.0;      // explicit side of the root
  double A = 1.0;      // diagonal 1 + dt (implicit weight sum)
  double inv_A = 1.0;
  // dim == 1 implicit data, dt-scaled
  double up1 = 0.0;    // coefficient on V_{j+1}
  double down1 = 0.0;  // coefficient on V_{j-1}
  double wscale = 0.0;           // factor on the window dot
  const Vec* window = nullptr;   // application window, center zeroed
  int window_lo = 0;
  // dim > 1 implicit data, dt-scaled: (flat index, weight) after clamping
  std::vector<std::pair<long, double>> entries;
  double entries_const = 0.0;  // exterior contributions under the u0 policy
};

TimeStepper::TimeStepper(const ControlProblem& p, const Grid& g,
                         const SchemeParams& params, int threads,
                         QuadratureControl q)
    : p_(&p),
      g_(&g),
      params_(params),
      threads_(std::clamp(threads, 1, 64)),
      delta_(params.resolve_delta(g, p.measure.sigma)),
      cache_(p, g, delta_, q, params.correction, params.inject_negative_weight),
      implicit_(params.theta > 0.0 || params.vartheta > 0.0 || params.correction) {
  if (p.dim != g.dim) throw ConfigError("problem and grid dimensions differ");
  if (!(params.theta >= 0.0 && params.theta <= 1.0) ||
      !(params.vartheta >= 0.0 && params.vartheta <= 1.0))
    throw ConfigError("theta and vartheta must lie in [0, 1]");
  if (params.correction && (params.theta != 1.0 || params.vartheta != 1.0))
    throw ConfigError("the diffusion correction requires theta = vartheta = 1");
  if (!(params.fixed_point_tol > 0.0))
    throw ConfigError("fixed_point_tol must be positive");
  if (!p.running_cost || !p.discount || !p.drift || !p.jump || !p.initial)
    throw ConfigError("problem has unset coefficient callbacks");
  if (p.controls_a < 1 || p.controls_b < 1)
    throw ConfigError("control sets must be nonempty");
}

TimeStepper::~TimeStepper() = default;

Vec TimeStepper::padded(const Vec& slice) const {
  const long n = g_->node_count();
  Vec out(n + 2 * pad_);
  out.segment(pad_, n) = slice;
  if (g_->extension == Extension::constant_nearest) {
    out.head(pad_).setConstant(slice(0));
    out.tail(pad_).setConstant(slice(n - 1));
  } else {
    out.head(pad_) = exterior_left_;
    out.tail(pad_) = exterior_right_;
  }
  return out;
}

void TimeStepper::build_level(int n, const Vec& u_prev) {
  const Grid& g = *g_;
  const ControlProblem& p = *p_;
  const int na = p.controls_a, nb = p.controls_b;
  const long nodes = g.node_count();
  const double dt = g.dt, dx = g.dx;
  const double t_n = g.time(n), t_prev = g.time(n - 1);
  const double th = params_.theta, vt = params_.vartheta;
  const bool corr = params_.correction;
  const bool xt = p.eta_dependence == EtaDependence::xt_dependent;

  level_.assign(static_cast<std::size_t>(nodes) * na * nb, NodeControl{});

  // prefetch stencils (single-threaded: the cache map mutates) and size the
  // halo for the one-dimensional padded layout
  int pad = 1;
  if (g.dim == 1) {
    for (long i = 0; i < nodes; ++i)
      for (int a = 0; a < na; ++a)
        for (int b = 0; b < nb; ++b) {
          const StencilWeights& w = cache_.get(n, i, a, b);
          if (w.window.size() > 0)
            pad = std::max(pad, std::max(-w.window_lo,
                                         w.window_lo +
                                             static_cast<int>(w.window.size()) - 1));
          if (xt) {
            const StencilWeights& wp = cache_.get(n - 1, i, a, b);
            if (wp.window.size() > 0)
              pad = std::max(pad, std::max(-wp.window_lo,
                                           wp.window_lo +
                                               static_cast<int>(wp.window.size()) - 1));
          }
        }
    pad_ = pad;
    if (g.extension == Extension::initial_profile) {
      exterior_left_.resize(pad_);
      exterior_right_.resize(pad_);
      Vec x(1);
      for (int m = 0; m < pad_; ++m) {
        x(0) = (-g.half_nodes - (pad_ - m)) * dx;
        exterior_left_(m) = p.initial(x);
        x(0) = (g.half_nodes + 1 + m) * dx;
        exterior_right_(m) = p.initial(x);
      }
    }
  } else {
    for (long i = 0; i < nodes; ++i)
      for (int a = 0; a < na; ++a)
        for (int b = 0; b < nb; ++b) {
          cache_.get(n, i, a, b);
          if (xt) cache_.get(n - 1, i, a, b);
        }
  }

  const Vec prev_pad = g.dim == 1 ? padded(u_prev) : Vec();

  // value of the previous slice at an arbitrary multi-index (dim > 1 path)
  auto prev_at = [&](const IVec& j) -> double {
    if (g.inside(j)) return u_prev(g.flatten(j));
    if (g.extension == Extension::constant_nearest)
      return u_prev(g.flatten(clamp_index(g, j)));
    return p.initial(j.cast<double>() * dx);
  };

  // push one dt-scaled implicit entry, folding the extension policy
  auto push_entry = [&](NodeControl& d, const IVec& j, const IVec& off, double w) {
    if (w == 0.0) return;
    IVec tgt = j + off;
    if (g.inside(tgt)) {
      d.entries.emplace_back(g.flatten(tgt), w);
    } else if (g.extension == Extension::constant_nearest) {
      d.entries.emplace_back(g.flatten(clamp_index(g, tgt)), w);
    } else {
      d.entries_const += w * p.initial(tgt.cast<double>() * dx);
    }
  };

  for (long i = 0; i < nodes; ++i) {
    const IVec jm = g.unflatten(i);
    const Vec x = g.point(i);
    for (int a = 0; a < na; ++a)
      for (int b = 0; b < nb; ++b) {
        NodeControl& d = level_[(static_cast<std::size_t>(i) * na + a) * nb + b];
        const StencilWeights& w_n = cache_.get(n, i, a, b);
        const StencilWeights& w_prev = xt ? cache_.get(n - 1, i, a, b) : w_n;
        const double c_n = p.discount(t_n, x, a, b);

        if (!corr) {
          // explicit side: f at t_{n-1}, discount acting on U^{n-1}
          const double f_prev = p.running_cost(t_prev, x, a, b);
          double E = dt * f_prev;
          double diag = 1.0 - dt * c_n;
          if (th < 1.0) {
            const Vec bt = p.drift(t_prev, x, a, b) - w_prev.b_delta;
            const DriftWeights dw = drift_weights(bt, dx);
            diag -= dt * (1.0 - th) * dw.sum;
            if (g.dim == 1) {
              E += dt * (1.0 - th) *
                   (dw.up(0) * prev_pad(pad_ + i + 1) +
                    dw.down(0) * prev_pad(pad_ + i - 1));
            } else {
              IVec e = IVec::Zero(g.dim);
              for (int k = 0; k < g.dim; ++k) {
                e(k) = 1;
                E += dt * (1.0 - th) * dw.up(k) * prev_at(jm + e);
                e(k) = -1;
                E += dt * (1.0 - th) * dw.down(k) * prev_at(jm + e);
                e(k) = 0;
              }
            }
          }
          if (vt < 1.0) {
            diag -= dt * (1.0 - vt) * w_prev.jump.sum_off;
            if (g.dim == 1) {
              if (w_prev.window.size() > 0)
                E += dt * (1.0 - vt) *
                     prev_pad.segment(pad_ + i + w_prev.window_lo,
                                      w_prev.window.size())
                         .dot(w_prev.window);
            } else {
              for (std::size_t l = 0; l < w_prev.jump.offsets.size(); ++l) {
                const IVec& off = w_prev.jump.offsets[l];
                if (off.isZero()) continue;
                E += dt * (1.0 - vt) * w_prev.jump.weights(l) *
                     prev_at(jm + off);
              }
            }
          }
          if (diag < -kDiagTol) {
            std::ostringstream os;
            os << "explicit coefficient " << diag << " < 0 at node " << i
               << ", level " << n << ", a=" << a << ", b=" << b
               << " (stability bound: dt <= " << dt / (1.0 - diag) << ")";
            throw MonotonicityError(os.str());
          }
          E += diag * u_prev(i);
          d.E = E;

          // implicit side
          double S = 0.0;
          if (th > 0.0) {
            const Vec bt = p.drift(t_n, x, a, b) - w_n.b_delta;
            const DriftWeights dw = drift_weights(bt, dx);
            S += th * dw.sum;
            if (g.dim == 1) {
              d.up1 += dt * th * dw.up(0);
              d.down1 += dt * th * dw.down(0);
            } else {
              IVec e = IVec::Zero(g.dim);
              for (int k = 0; k < g.dim; ++k) {
                e(k) = 1;
                push_entry(d, jm, e, dt * th * dw.up(k));
                e(k) = -1;
                push_entry(d, jm, e, dt * th * dw.down(k));
                e(k) = 0;
              }
            }
          }
          if (vt > 0.0) {
            S += vt * w_n.jump.sum_off;
            if (g.dim == 1) {
              if (w_n.window.size() > 0) {
                if (w_n.window.minCoeff() < 0.0) {
                  std::ostringstream os;
                  os << "negative jump weight at node " << i << ", level " << n
                     << ", a=" << a << ", b=" << b;
                  throw MonotonicityError(os.str());
                }
                d.window = &w_n.window;
                d.window_lo = w_n.window_lo;
                d.wscale = dt * vt;
              }
            } else {
              for (std::size_t l = 0; l < w_n.jump.offsets.size(); ++l) {
                const IVec& off = w_n.jump.offsets[l];
                if (off.isZero()) continue;
                push_entry(d, jm, off, dt * vt * w_n.jump.weights(l));
              }
            }
          }
          d.A = 1.0 + dt * S;
        } else {
          // corrected scheme: fully implicit, f at t_n, discount on U^n,
          // plus the small-jump diffusion form for a_delta
          const double f_n = p.running_cost(t_n, x, a, b);
          d.E = u_prev(i) + dt * f_n;

          const Vec bt = p.drift(t_n, x, a, b) - w_n.b_delta;
          const DriftWeights dw = drift_weights(bt, dx);
          double S = c_n + dw.sum + w_n.jump.sum_off;

          const Mat& am = w_n.a_delta;
          if (g.dim == 1) {
            const double difw = am(0, 0) / (dx * dx);
            S += 2.0 * difw;
            d.up1 = dt * (dw.up(0) + difw);
            d.down1 = dt * (dw.down(0) + difw);
            if (w_n.window.size() > 0) {
              if (w_n.window.minCoeff() < 0.0) {
                std::ostringstream os;
                os << "negative jump weight at node " << i << ", level " << n
                   << ", a=" << a << ", b=" << b;
                throw MonotonicityError(os.str());
              }
              d.window = &w_n.window;
              d.window_lo = w_n.window_lo;
              d.wscale = dt;
            }
          } else {
            IVec e = IVec::Zero(g.dim);
            for (int k = 0; k < g.dim; ++k) {
              double offdiag = 0.0;
              for (int l = 0; l < g.dim; ++l)
                if (l != k) offdiag += std::abs(am(k, l));
              const double axis = (am(k, k) - offdiag) / (dx * dx);
              if (axis < -kDiagTol) {
                std::ostringstream os;
                os << "diffusion matrix not diagonally dominant at node " << i
                   << " (x = " << x.transpose() << "), level " << n;
                throw MonotonicityError(os.str());
              }
              const double aw = std::max(axis, 0.0);
              e(k) = 1;
              push_entry(d, jm, e, dt * (dw.up(k) + aw));
              e(k) = -1;
              push_entry(d, jm, e, dt * (dw.down(k) + aw));
              e(k) = 0;
              S += 2.0 * aw;
            }
            for (int k = 0; k < g.dim; ++k)
              for (int l = k + 1; l < g.dim; ++l) {
                const double cw = std::abs(am(k, l)) / (dx * dx);
                if (cw == 0.0) continue;
                IVec off = IVec::Zero(g.dim);
                off(k) = 1;
                off(l) = am(k, l) > 0.0 ? 1 : -1;
                push_entry(d, jm, off, dt * cw);
                push_entry(d, jm, -off, dt * cw);
                S += 2.0 * cw;
              }
            // the pure jump entries
            for (std::size_t l = 0; l < w_n.jump.offsets.size(); ++l) {
              const IVec& off = w_n.jump.offsets[l];
              if (off.isZero()) continue;
              push_entry(d, jm, off, dt * w_n.jump.weights(l));
            }
          }
          d.A = 1.0 + dt * S;
          if (!(d.A > 0.0)) {
            std::ostringstream os;
            os << "nonpositive diagonal " << d.A << " at node " << i
               << ", level " << n << " (negative discount?)";
            throw MonotonicityError(os.str());
          }
        }
        d.inv_A = 1.0 / d.A;
      }
  }
}

void TimeStepper::sweep(const Vec& cur, Vec& next, double* max_update,
                        double* max_residual) const {
  const long nodes = g_->node_count();
  const int na = p_->controls_a, nb = p_->controls_b;
  const bool one_d = g_->dim == 1;
  const Vec cur_pad = implicit_ && one_d ? padded(cur) : Vec();

  auto run = [&](long lo, long hi, double* upd, double* res) {
    double u = 0.0, r = 0.0;
    for (long i = lo; i < hi; ++i) {
      double best = -std::numeric_limits<double>::infinity();
      double resid = std::numeric_limits<double>::infinity();
      const NodeControl* d = &level_[(static_cast<std::size_t>(i) * na) * nb];
      for (int a = 0; a < na; ++a) {
        double worst = std::numeric_limits<double>::infinity();
        double fmax = -std::numeric_limits<double>::infinity();
        for (int b = 0; b < nb; ++b, ++d) {
          double val = d->E;
          if (implicit_) {
            if (one_d) {
              val += d->up1 * cur_pad(pad_ + i + 1) +
                     d->down1 * cur_pad(pad_ + i - 1);
              if (d->window)
                val += d->wscale *
                       cur_pad.segment(pad_ + i + d->window_lo, d->window->size())
                           .dot(*d->window);
            } else {
              double s = d->entries_const;
              for (const auto& [idx, w] : d->entries) s += w * cur(idx);
              val += s;
            }
          }
          const double root = val * d->inv_A;
          if (root < worst) worst = root;
          const double f = d->A * cur(i) - val;
          if (f > fmax) fmax = f;
        }
        if (worst > best) best = worst;
        if (fmax < resid) resid = fmax;
      }
      next(i) = best;
      u = std::max(u, std::abs(best - cur(i)));
      r = std::max(r, std::abs(resid));
    }
    *upd = u;
    *res = r;
  };

  if (threads_ == 1 || nodes < 256) {
    run(0, nodes, max_update, max_residual);
    return;
  }
  const int t = threads_;
  std::vector<double> upd(t, 0.0), res(t, 0.0);
  std::vector<std::thread> pool;
  const long chunk = (nodes + t - 1) / t;
  for (int k = 0; k < t; ++k) {
    const long lo = k * chunk, hi = std::min(nodes, (k + 1) * chunk);
    if (lo >= hi) break;
    pool.emplace_back(run, lo, hi, &upd[k], &res[k]);
  }
  for (auto& th : pool) th.join();
  *max_update = *std::max_element(upd.begin(), upd.end());
  *max_residual = *std::max_element(res.begin(), res.end());
}

Vec TimeStepper::advance(int time_index, const Vec& u_prev) {
  if (time_index < 1 || time_index > g_->steps)
    throw ConfigError("time index out of range in advance");
  if (u_prev.size() != g_->node_count())
    throw ConfigError("slice size does not match the grid");
  cache_.retire_before(time_index - 1);
  build_level(time_index, u_prev);

  const long nodes = g_->node_count();
  Vec next(nodes);
  if (!implicit_) {
    double upd = 0.0, res = 0.0;
    sweep(u_prev, next, &upd, &res);
    last_iterations_ = 1;
    last_residual_ = 0.0;  // the explicit root is exact
    return next;
  }

  const double tol = params_.fixed_point_tol;
  double stop = tol;
  Vec cur = u_prev;  // warm start
  std::vector<double> history;
  for (int it = 1; it <= params_.fixed_point_max_iter; ++it) {
    double upd = 0.0, res = 0.0;
    sweep(cur, next, &upd, &res);
    history.push_back(upd);
    if (upd <= stop) {
      if (res <= 10.0 * tol) {
        last_iterations_ = it;
        last_residual_ = res;
        return cur;  // certified by its own residual
      }
      if (stop < 1e-17 * (1.0 + cur.cwiseAbs().maxCoeff()))
        throw SolverError(
            "fixed point stalled at residual " + std::to_string(res),
            time_index, history);
      stop *= 0.25;  // tighten until the residual certificate passes
    }
    std::swap(cur, next);
  }
  throw SolverError("fixed point did not converge within " +
                        std::to_string(params_.fixed_point_max_iter) +
                        " iterations",
                    time_index, history);
}

SolutionField solve(const ControlProblem& p, const Grid& g,
                    const SchemeParams& params, const SolveOptions& opts) {
  if (!p.initial) throw ConfigError("problem has no initial datum");
  const long nodes = g.node_count();
  if (opts.store_all &&
      static_cast<double>(nodes) * (g.steps + 1) > 3e8)
    throw ConfigError("field too large to store all slices; disable store_all");

  TimeStepper stepper(p, g, params, opts.threads);

  Vec cur(nodes);
  for (long i = 0; i < nodes; ++i) cur(i) = p.initial(g.point(i));
  int n0 = 0;
  if (opts.resume) {
    if (opts.checkpoint_path.empty())
      throw ConfigError("resume requested without a checkpoint path");
    auto [level, slice] = read_slice_csv(g, opts.checkpoint_path);
    if (level < 0 || level > g.steps)
      throw ConfigError("checkpoint level outside this grid's range");
    n0 = level;
    cur = slice;
  }

  SolutionField out;
  out.grid = g;
  if (opts.store_all) {
    out.slices.assign(g.steps + 1, Vec());
    out.slices[n0] = cur;
  }

  const int stride = std::max(1, g.steps / 10);
  for (int n = n0 + 1; n <= g.steps; ++n) {
    cur = stepper.advance(n, cur);
    if (opts.store_all) out.slices[n] = cur;
    if (opts.checkpoint_every > 0 && !opts.checkpoint_path.empty() &&
        (n % opts.checkpoint_every == 0 || n == g.steps))
      write_slice_csv(g, cur, n, opts.checkpoint_path);
    if (opts.log && (n % stride == 0 || n == g.steps))
      *opts.log << "level " << n << "/" << g.steps
                << "  sup=" << cur.cwiseAbs().maxCoeff()
                << "  iters=" << stepper.last_iterations() << "\n";
  }
  if (!opts.store_all) out.slices = {cur};
  return out;
}

}  // namespace mdq
