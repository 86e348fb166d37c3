#include "mdq/grid.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"

using namespace mdq;

namespace {
IVec ivec1(int j) { return IVec::Constant(1, j); }
Vec vec1(double x) { return Vec::Constant(1, x); }
}  // namespace

TEST_CASE("tent weights: nodes, midpoints, 2-D cell centre") {
  Grid g = Grid::make(1, 0.5, 2.0, 0.1, 1.0);
  // Kronecker property at nodes
  CHECK(tent_weight(g, ivec1(1), vec1(0.5)) == 1.0);
  CHECK(tent_weight(g, ivec1(0), vec1(0.5)) == 0.0);
  CHECK(tent_weight(g, ivec1(2), vec1(0.5)) == 0.0);
  // midpoint splits evenly
  CHECK(tent_weight(g, ivec1(0), vec1(0.25)) == doctest::Approx(0.5));
  CHECK(tent_weight(g, ivec1(1), vec1(0.25)) == doctest::Approx(0.5));

  Grid g2 = Grid::make(2, 0.5, 2.0, 0.1, 1.0);
  Vec centre(2);
  centre << 0.25, 0.25;
  IVec j(2);
  int hits = 0;
  for (int a = 0; a <= 1; ++a)
    for (int b = 0; b <= 1; ++b) {
      j << a, b;
      CHECK(tent_weight(g2, j, centre) == doctest::Approx(0.25));
      ++hits;
    }
  CHECK(hits == 4);
}

TEST_CASE("tents form a partition of unity") {
  Grid g = Grid::make(2, 0.25, 1.0, 0.1, 1.0);
  std::mt19937 rng(42);
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  for (int trial = 0; trial < 2000; ++trial) {
    Vec x(2);
    x << u(rng), u(rng);
    double sum = 0.0;
    IVec j(2);
    for (int a = -g.half_nodes; a <= g.half_nodes; ++a)
      for (int b = -g.half_nodes; b <= g.half_nodes; ++b) {
        j << a, b;
        sum += tent_weight(g, j, x);
      }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("interpolation is exact on affine data and halves the parabola") {
  Grid g = Grid::make(1, 0.25, 2.0, 0.1, 1.0);
  Vec affine(g.node_count()), parab(g.node_count());
  for (long i = 0; i < g.node_count(); ++i) {
    const double x = g.point(i)(0);
    affine(i) = 3.0 * x - 1.0;
    parab(i) = x * x;
  }
  SliceView va{&g, &affine, nullptr};
  CHECK(interpolate(va, vec1(0.1)) == doctest::Approx(3.0 * 0.1 - 1.0));
  CHECK(interpolate(va, vec1(-0.6)) == doctest::Approx(3.0 * -0.6 - 1.0));
  CHECK(interpolate(va, vec1(0.25)) == doctest::Approx(3.0 * 0.25 - 1.0));
  // at a cell midpoint the interpolant of x^2 returns the corner average
  SliceView vp{&g, &parab, nullptr};
  CHECK(interpolate(vp, vec1(0.125)) ==
        doctest::Approx(0.5 * (0.0 + 0.0625)));
}

TEST_CASE("extension policies govern out-of-box values") {
  Grid g = Grid::make(1, 0.5, 1.0, 0.1, 1.0);  // nodes -1,-0.5,0,0.5,1
  Vec vals(g.node_count());
  for (long i = 0; i < g.node_count(); ++i) vals(i) = g.point(i)(0);
  SliceView clamp{&g, &vals, nullptr};
  // nearest-node clamp: beyond the right edge everything reads the edge node
  CHECK(clamp.at(ivec1(3)) == doctest::Approx(1.0));
  CHECK(interpolate(clamp, vec1(1.75)) == doctest::Approx(1.0));

  Grid gi = g;
  gi.extension = Extension::initial_profile;
  SliceView prof{&gi, &vals, [](const Vec& x) { return 10.0 + x(0); }};
  CHECK(prof.at(ivec1(3)) == doctest::Approx(11.5));
  // straddling cell mixes the edge node with the exterior datum
  CHECK(interpolate(prof, vec1(1.25)) == doctest::Approx(0.5 * 1.0 + 0.5 * 11.5));

  SliceView broken{&gi, &vals, nullptr};
  CHECK_THROWS_AS(broken.at(ivec1(3)), ConfigError);
}

TEST_CASE("grid construction snaps coverage and rejects bad input") {
  Grid g = Grid::make(1, 0.3, 1.0, 0.4, 1.0);
  CHECK(g.half_nodes == 3);  // closest whole-cell cover of radius 1.0
  CHECK(g.steps == 3);       // lround(1.0/0.4) rounds half away from zero
  CHECK(g.horizon() == doctest::Approx(1.0));
  CHECK_THROWS_AS(Grid::make(0, 0.1, 1.0, 0.1, 1.0), ConfigError);
  CHECK_THROWS_AS(Grid::make(1, -0.1, 1.0, 0.1, 1.0), ConfigError);
  CHECK_THROWS_AS(Grid::make(1, 0.1, 0.05, 0.1, 1.0), ConfigError);
  CHECK_THROWS_AS(Grid::make(1, 0.1, 1.0, 0.1, -1.0), ConfigError);
}

TEST_CASE("flatten and unflatten are inverse") {
  Grid g = Grid::make(3, 0.5, 1.0, 0.1, 1.0);
  for (long idx = 0; idx < g.node_count(); ++idx) {
    CHECK(g.flatten(g.unflatten(idx)) == idx);
    CHECK(g.inside(g.unflatten(idx)));
  }
  IVec out(3);
  out << 0, 0, g.half_nodes + 1;
  CHECK(!g.inside(out));
}

TEST_CASE("solution CSV and checkpoint round-trip") {
  Grid g = Grid::make(1, 0.5, 1.0, 0.25, 0.5);
  SolutionField f;
  f.grid = g;
  f.slices.assign(g.steps + 1, Vec::Zero(g.node_count()));
  for (int n = 0; n <= g.steps; ++n)
    for (long i = 0; i < g.node_count(); ++i)
      f.slices[n](i) = n + 0.001 * i;

  const std::string dir =
      (std::filesystem::temp_directory_path() / "grid_csv_test").string();
  std::remove((dir + ".csv").c_str());
  write_solution_csv(f, dir + ".csv");
  std::ifstream in(dir + ".csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "t,x1,value");
  long rows = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == (g.steps + 1) * g.node_count());

  write_slice_csv(g, f.slices[1], 1, dir + "_slice.csv");
  auto [n, slice] = read_slice_csv(g, dir + "_slice.csv");
  CHECK(n == 1);
  CHECK((slice - f.slices[1]).lpNorm<Eigen::Infinity>() == 0.0);
}
