#include "mdq/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace mdq {

Grid Grid::make(int dim, double dx, double box_radius, double dt, double horizon,
                Extension ext) {
  if (dim < 1) throw ConfigError("grid dim must be positive");
  if (!(dx > 0.0)) throw ConfigError("grid dx must be positive");
  if (!(dt > 0.0)) throw ConfigError("grid dt must be positive");
  if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
  if (!(box_radius >= dx)) throw ConfigError("box radius must be at least dx");
  Grid g;
  g.dim = dim;
  g.dx = dx;
  g.half_nodes = std::max(1L, std::lround(box_radius / dx));
  g.steps = std::max(1L, std::lround(horizon / dt));
  g.dt = horizon / g.steps;  // cover the horizon exactly
  g.extension = ext;
  // guard against absurd node counts before anyone allocates
  double count = 1.0;
  for (int i = 0; i < dim; ++i) count *= g.nodes_per_axis();
  if (count > 5e8) throw ConfigError("grid would have more than 5e8 nodes");
  return g;
}

long Grid::node_count() const {
  long count = 1;
  for (int i = 0; i < dim; ++i) count *= nodes_per_axis();
  return count;
}

long Grid::flatten(const IVec& j) const {
  long idx = 0, stride = 1;
  for (int i = 0; i < dim; ++i) {
    idx += (j(i) + half_nodes) * stride;
    stride *= nodes_per_axis();
  }
  return idx;
}

IVec Grid::unflatten(long idx) const {
  IVec j(dim);
  for (int i = 0; i < dim; ++i) {
    j(i) = static_cast<int>(idx % nodes_per_axis()) - half_nodes;
    idx /= nodes_per_axis();
  }
  return j;
}

bool Grid::inside(const IVec& j) const {
  for (int i = 0; i < dim; ++i)
    if (j(i) < -half_nodes || j(i) > half_nodes) return false;
  return true;
}

double tent_weight(const Grid& g, const IVec& j, const Vec& x) {
  double w = 1.0;
  for (int i = 0; i < g.dim; ++i) {
    const double s = 1.0 - std::abs(x(i) / g.dx - j(i));
    if (s <= 0.0) return 0.0;
    w *= s;
  }
  return w;
}

double SliceView::at(const IVec& j) const {
  if (grid->inside(j)) return (*values)(grid->flatten(j));
  if (grid->extension == Extension::constant_nearest) {
    IVec c = j;
    for (int i = 0; i < grid->dim; ++i)
      c(i) = std::clamp(c(i), -grid->half_nodes, grid->half_nodes);
    return (*values)(grid->flatten(c));
  }
  if (!exterior)
    throw ConfigError("initial_profile extension needs an exterior datum");
  return exterior(grid->point(j));
}

double interpolate(const SliceView& view, const Vec& x) {
  const Grid& g = *view.grid;
  IVec base(g.dim);
  Vec frac(g.dim);
  for (int i = 0; i < g.dim; ++i) {
    const double s = x(i) / g.dx;
    const double f = std::floor(s);
    base(i) = static_cast<int>(f);
    frac(i) = s - f;
  }
  double out = 0.0;
  IVec corner(g.dim);
  for (int mask = 0; mask < (1 << g.dim); ++mask) {
    double w = 1.0;
    for (int i = 0; i < g.dim; ++i) {
      const bool hi = mask & (1 << i);
      corner(i) = base(i) + (hi ? 1 : 0);
      w *= hi ? frac(i) : 1.0 - frac(i);
    }
    if (w > 0.0) out += w * view.at(corner);
  }
  return out;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::string csv_header(int dim) {
  std::string h = "t";
  for (int i = 1; i <= dim; ++i) h += ",x" + std::to_string(i);
  return h + ",value";
}

void write_rows(std::ofstream& out, const Grid& g, const Vec& slice, double t) {
  for (long idx = 0; idx < g.node_count(); ++idx) {
    const Vec x = g.point(idx);
    out << format_number(t);
    for (int i = 0; i < g.dim; ++i) out << ',' << format_number(x(i));
    out << ',' << format_number(slice(idx)) << '\n';
  }
}

}  // namespace

void write_solution_csv(const SolutionField& field, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  out << csv_header(field.grid.dim) << '\n';
  for (std::size_t n = 0; n < field.slices.size(); ++n)
    write_rows(out, field.grid, field.slices[n], field.grid.time(int(n)));
}

void write_slice_csv(const Grid& g, const Vec& slice, int time_index,
                     const std::string& path) {
  if (slice.size() != g.node_count())
    throw ConfigError("slice size does not match the grid");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  out << "time_index," << csv_header(g.dim) << '\n';
  for (long idx = 0; idx < g.node_count(); ++idx) {
    const Vec x = g.point(idx);
    out << time_index << ',' << format_number(g.time(time_index));
    for (int i = 0; i < g.dim; ++i) out << ',' << format_number(x(i));
    out << ',' << format_number(slice(idx)) << '\n';
  }
}

std::pair<int, Vec> read_slice_csv(const Grid& g, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("time_index,", 0) != 0)
    throw ConfigError(path + " is not a slice checkpoint");
  Vec slice(g.node_count());
  long row = 0;
  int time_index = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (row >= g.node_count()) throw ConfigError(path + " has too many rows");
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(std::strtod(cell.c_str(), nullptr));
    if (cells.size() != std::size_t(g.dim) + 3)
      throw ConfigError(path + " row has the wrong column count");
    const int n = static_cast<int>(cells[0]);
    if (time_index < 0) time_index = n;
    if (n != time_index) throw ConfigError(path + " mixes time levels");
    slice(row++) = cells.back();
  }
  if (row != g.node_count())
    throw ConfigError(path + " row count does not match the grid");
  return {time_index, slice};
}

}  // namespace mdq
