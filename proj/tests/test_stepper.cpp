#include "mdq/stepper.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "doctest.h"

using namespace mdq;

namespace {

ControlProblem bare_problem(double sigma = 0.5, double intensity = 0.0) {
  ControlProblem p;
  p.measure = LevyMeasure::truncated_stable(sigma, intensity);
  p.running_cost = [](double, const Vec&, int, int) { return 0.0; };
  p.discount = [](double, const Vec&, int, int) { return 0.0; };
  p.drift = [](double, const Vec&, int, int) { return Vec::Zero(1); };
  p.jump = [](double, const Vec&, int, int, const Vec& z) { return z; };
  p.initial = [](const Vec& x) { return std::max(0.0, 1.0 - x.lpNorm<1>()); };
  return p;
}

Vec sample_initial(const ControlProblem& p, const Grid& g) {
  Vec u(g.node_count());
  for (long i = 0; i < g.node_count(); ++i) u(i) = p.initial(g.point(i));
  return u;
}

SchemeParams explicit_params(double delta) {
  SchemeParams sp;
  sp.delta_rule = DeltaRule::manual;
  sp.delta = delta;
  return sp;
}

SchemeParams implicit_params(double delta) {
  SchemeParams sp = explicit_params(delta);
  sp.theta = 1.0;
  sp.vartheta = 1.0;
  return sp;
}

}  // namespace

TEST_CASE("transport step matches the upwind update") {
  // pure drift b = 1: one explicit step is U_j + (dt/dx)(U_{j+1} - U_j)
  ControlProblem p = bare_problem();
  p.drift = [](double, const Vec&, int, int) { return Vec::Constant(1, 1.0); };
  Grid g = Grid::make(1, 0.25, 2.0, 0.125, 1.0);
  TimeStepper st(p, g, explicit_params(0.25));
  Vec u0 = sample_initial(p, g);
  Vec u1 = st.advance(1, u0);
  for (long i = 0; i < g.node_count() - 1; ++i)
    CHECK(u1(i) == doctest::Approx(0.5 * u0(i) + 0.5 * u0(i + 1)).epsilon(1e-14));
  // at the right edge the neighbor clamps onto the node itself
  CHECK(u1(g.node_count() - 1) == doctest::Approx(u0(g.node_count() - 1)));
  CHECK(st.last_iterations() == 1);
}

TEST_CASE("jump step matches the assembled weights") {
  ControlProblem p = bare_problem(0.5, 1.0);
  Grid g = Grid::make(1, 0.25, 2.0, 0.05, 1.0);
  TimeStepper st(p, g, explicit_params(0.25));
  Vec u0 = sample_initial(p, g);
  Vec u1 = st.advance(1, u0);

  NonlocalWeights nw = nonlocal_weights(p, g, 0.0, Vec::Zero(1), 0, 0, 0.25);
  const int half = g.half_nodes;
  for (long i = 0; i < g.node_count(); ++i) {
    double acc = u0(i);
    for (std::size_t l = 0; l < nw.offsets.size(); ++l) {
      const int o = nw.offsets[l](0);
      if (o == 0) continue;
      const long tgt = std::clamp<long>(i + o, 0, 2 * half);
      acc += g.dt * nw.weights(l) * (u0(tgt) - u0(i));
    }
    CHECK(u1(i) == doctest::Approx(acc).epsilon(1e-13));
  }
}

TEST_CASE("running cost enters through the game value") {
  // no dynamics at all: one step adds dt * max_a min_b f
  ControlProblem p = bare_problem();
  p.controls_a = 2;
  p.controls_b = 2;
  p.running_cost = [](double, const Vec&, int a, int b) {
    const double al = 2.0 * a - 1.0, be = 2.0 * b - 1.0;
    return al * be + 0.1 * al + 0.01 * be;
  };
  // max_a min_b: a=-1 gives min(0.89, -1.09) = -1.09, a=+1 gives
  // min(-0.91, 1.11) = -0.91, so the value is -0.91
  Grid g = Grid::make(1, 0.25, 1.0, 0.1, 1.0);
  TimeStepper st(p, g, explicit_params(0.25));
  Vec u0 = sample_initial(p, g);
  Vec u1 = st.advance(1, u0);
  for (long i = 0; i < g.node_count(); ++i)
    CHECK(u1(i) == doctest::Approx(u0(i) - 0.091).epsilon(1e-14));
}

TEST_CASE("discount acts on the old level, corrected scheme on the new one") {
  ControlProblem p = bare_problem();
  p.discount = [](double, const Vec&, int, int) { return 0.5; };
  Grid g = Grid::make(1, 0.25, 1.0, 0.1, 1.0);
  Vec u0 = sample_initial(p, g);

  TimeStepper ex(p, g, explicit_params(0.25));
  Vec u1 = ex.advance(1, u0);
  for (long i = 0; i < g.node_count(); ++i)
    CHECK(u1(i) == doctest::Approx((1.0 - 0.05) * u0(i)).epsilon(1e-14));

  SchemeParams corr = implicit_params(0.25);
  corr.correction = true;
  TimeStepper co(p, g, corr);
  Vec v1 = co.advance(1, u0);
  for (long i = 0; i < g.node_count(); ++i)
    CHECK(v1(i) == doctest::Approx(u0(i) / 1.05).epsilon(1e-9));
}

TEST_CASE("running-cost time level differs between the schemes") {
  // f(t) = t: the uncorrected step uses f at the old level (zero), the
  // corrected step uses the new level (dt)
  ControlProblem p = bare_problem();
  p.running_cost = [](double t, const Vec&, int, int) { return t; };
  Grid g = Grid::make(1, 0.25, 1.0, 0.1, 1.0);
  Vec u0 = sample_initial(p, g);

  Vec u1 = TimeStepper(p, g, explicit_params(0.25)).advance(1, u0);
  CHECK((u1 - u0).cwiseAbs().maxCoeff() == doctest::Approx(0.0));

  SchemeParams corr = implicit_params(0.25);
  corr.correction = true;
  Vec v1 = TimeStepper(p, g, corr).advance(1, u0);
  for (long i = 0; i < g.node_count(); ++i)
    CHECK(v1(i) == doctest::Approx(u0(i) + 0.01).epsilon(1e-9));
}

TEST_CASE("implicit step works far beyond the explicit stability bound") {
  ControlProblem p = bare_problem(1.5, 1.0);
  Grid g = Grid::make(1, 0.0625, 2.0, 0.1, 1.0);  // kappa sum is about 80
  Vec u0 = sample_initial(p, g);

  CHECK_THROWS_AS(TimeStepper(p, g, explicit_params(0.0625)).advance(1, u0),
                  MonotonicityError);

  TimeStepper imp(p, g, implicit_params(0.0625));
  Vec u1 = imp.advance(1, u0);
  CHECK(u1.cwiseAbs().maxCoeff() <= u0.cwiseAbs().maxCoeff() + 1e-12);
  CHECK(imp.last_iterations() > 1);
  CHECK(imp.last_residual() <= 10.0 * SchemeParams{}.fixed_point_tol);
}

TEST_CASE("implicit and explicit agree to second order in dt") {
  ControlProblem p = bare_problem(0.5, 1.0);
  p.initial = [](const Vec& x) { return std::exp(-x.squaredNorm()); };
  Grid g = Grid::make(1, 0.125, 2.0, 1e-3, 1.0);
  Vec u0 = sample_initial(p, g);
  Vec ue = TimeStepper(p, g, explicit_params(0.125)).advance(1, u0);
  Vec ui = TimeStepper(p, g, implicit_params(0.125)).advance(1, u0);
  // both are first-order consistent, difference is O(dt^2 * kappa)
  CHECK((ue - ui).cwiseAbs().maxCoeff() < 1e-4);
  CHECK((ue - u0).cwiseAbs().maxCoeff() > 1e-5);  // something happened
}

TEST_CASE("one step is monotone in the data") {
  ControlProblem p = bare_problem(0.5, 1.0);
  p.controls_a = 2;
  p.controls_b = 2;
  p.running_cost = [](double, const Vec&, int a, int b) {
    return 0.1 * (a - b);
  };
  p.drift = [](double, const Vec&, int a, int) {
    return Vec::Constant(1, a == 0 ? 0.5 : -0.25);
  };
  Grid g = Grid::make(1, 0.25, 2.0, 0.05, 1.0);
  Vec u = sample_initial(p, g);
  Vec v = u;
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> bump(0.0, 0.3);
  for (long i = 0; i < v.size(); ++i) v(i) += bump(rng);

  for (SchemeParams sp : {explicit_params(0.25), implicit_params(0.25)}) {
    Vec su = TimeStepper(p, g, sp).advance(1, u);
    Vec sv = TimeStepper(p, g, sp).advance(1, v);
    CHECK((sv - su).minCoeff() >= -1e-12);
  }
}

TEST_CASE("sup-norm stability over the whole horizon") {
  ControlProblem p = canonical_problem("two_player_nonconvex", 0.5);
  Grid g = Grid::make(1, 0.125, 2.0, 0.0125, 1.0);
  SolveOptions opts;
  SolutionField f = solve(p, g, explicit_params(0.125), opts);
  double sup_f = 1.11;  // max |running cost| over the four control pairs
  double u0_norm = f.slices[0].cwiseAbs().maxCoeff();
  for (int n = 0; n <= g.steps; ++n)
    CHECK(f.slices[n].cwiseAbs().maxCoeff() <=
          u0_norm + g.time(n) * sup_f + 1e-10);
}

TEST_CASE("injected negative weight trips the guard") {
  ControlProblem p = bare_problem(0.5, 1.0);
  Grid g = Grid::make(1, 0.25, 2.0, 0.05, 1.0);
  SchemeParams sp = implicit_params(0.25);
  sp.inject_negative_weight = true;
  Vec u0 = sample_initial(p, g);
  CHECK_THROWS_AS(TimeStepper(p, g, sp).advance(1, u0), MonotonicityError);
}

TEST_CASE("fixed point failure carries its history") {
  ControlProblem p = bare_problem(1.5, 1.0);
  Grid g = Grid::make(1, 0.0625, 2.0, 0.1, 1.0);
  SchemeParams sp = implicit_params(0.0625);
  sp.fixed_point_max_iter = 3;
  Vec u0 = sample_initial(p, g);
  try {
    TimeStepper(p, g, sp).advance(1, u0);
    FAIL("expected SolverError");
  } catch (const SolverError& e) {
    CHECK(e.time_index() == 1);
    CHECK(e.iteration_history().size() == 3);
    CHECK(e.iteration_history()[0] > 0.0);
  }
}

TEST_CASE("solve checkpoints and resumes bit for bit") {
  ControlProblem p = bare_problem(0.5, 1.0);
  Grid g = Grid::make(1, 0.25, 2.0, 0.05, 0.5);
  SchemeParams sp = explicit_params(0.25);

  SolutionField full = solve(p, g, sp);

  const std::string ck = "stepper_ck_test.csv";
  SolveOptions w;
  w.checkpoint_path = ck;
  w.checkpoint_every = 4;
  solve(p, g, sp, w);  // leaves the last checkpoint at the final level

  // write a mid-run checkpoint explicitly, then resume from it
  write_slice_csv(g, full.slices[6], 6, ck);
  SolveOptions r;
  r.checkpoint_path = ck;
  r.resume = true;
  SolutionField resumed = solve(p, g, sp, r);
  REQUIRE(resumed.slices.back().size() == full.slices.back().size());
  for (long i = 0; i < full.slices.back().size(); ++i)
    CHECK(resumed.slices.back()(i) == full.slices.back()(i));
  CHECK(resumed.slices[3].size() == 0);  // pre-checkpoint levels stay empty
  std::remove(ck.c_str());

  SolveOptions bad;
  bad.resume = true;
  CHECK_THROWS_AS(solve(p, g, sp, bad), ConfigError);
}

TEST_CASE("solver output is thread-count invariant") {
  ControlProblem p = bare_problem(0.5, 1.0);
  p.drift = [](double, const Vec&, int, int) { return Vec::Constant(1, 0.3); };
  Grid g = Grid::make(1, 2.0 / 256, 2.0, 0.01, 0.2);  // 513 nodes: threaded path
  SchemeParams sp = implicit_params(0.125);
  SolveOptions one, many;
  one.threads = 1;
  many.threads = 4;
  Vec a = solve(p, g, sp, one).slices.back();
  Vec b = solve(p, g, sp, many).slices.back();
  REQUIRE(a.size() == b.size());
  for (long i = 0; i < a.size(); ++i) CHECK(a(i) == b(i));
}

TEST_CASE("solve logs progress and honors store_all") {
  ControlProblem p = bare_problem(0.5, 1.0);
  Grid g = Grid::make(1, 0.25, 1.0, 0.05, 0.5);
  SolveOptions opts;
  std::ostringstream log;
  opts.log = &log;
  opts.store_all = false;
  SolutionField f = solve(p, g, explicit_params(0.25), opts);
  CHECK(f.slices.size() == 1);
  CHECK(log.str().find("level") != std::string::npos);
}

TEST_CASE("scheme parameter validation") {
  ControlProblem p = bare_problem();
  Grid g = Grid::make(1, 0.25, 1.0, 0.1, 1.0);
  SchemeParams sp = explicit_params(0.25);
  sp.theta = 1.5;
  CHECK_THROWS_AS(TimeStepper(p, g, sp), ConfigError);
  sp = explicit_params(0.25);
  sp.correction = true;  // correction without full implicitness
  CHECK_THROWS_AS(TimeStepper(p, g, sp), ConfigError);
  Grid g2 = Grid::make(2, 0.25, 1.0, 0.1, 1.0);
  CHECK_THROWS_AS(TimeStepper(p, g2, explicit_params(0.25)), ConfigError);
}

TEST_CASE("two-dimensional step with an isotropic jump map") {
  // eta(z) = (z, z) spreads one-dimensional jumps across the diagonal of a
  // two-dimensional grid; mass conservation still pins the weight sum
  ControlProblem p;
  p.dim = 2;
  p.measure = LevyMeasure::truncated_stable(0.5, 1.0);
  p.running_cost = [](double, const Vec&, int, int) { return 0.0; };
  p.discount = [](double, const Vec&, int, int) { return 0.0; };
  p.drift = [](double, const Vec&, int, int) { return Vec::Zero(2); };
  p.jump = [](double, const Vec&, int, int, const Vec& z) {
    return Vec::Constant(2, z(0));
  };
  p.initial = [](const Vec& x) { return std::exp(-x.squaredNorm()); };
  Grid g = Grid::make(2, 0.25, 1.0, 0.02, 1.0);
  Vec u0 = sample_initial(p, g);

  TimeStepper ex(p, g, explicit_params(0.25));
  Vec u1 = ex.advance(1, u0);
  CHECK(u1.cwiseAbs().maxCoeff() <= u0.cwiseAbs().maxCoeff() + 1e-12);
  CHECK((u1 - u0).cwiseAbs().maxCoeff() > 1e-6);

  TimeStepper im(p, g, implicit_params(0.25));
  Vec v1 = im.advance(1, u0);
  CHECK((v1 - u1).cwiseAbs().maxCoeff() < 0.05 * u0.cwiseAbs().maxCoeff());
}
