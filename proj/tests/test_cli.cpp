// End-to-end tests of the command-line binary: spawn it with std::system,
// inspect exit codes and the files it writes.  The binary path comes in
// through the MDQ_CLI_PATH compile definition.

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

namespace {

namespace fs = std::filesystem;

const std::string kCli = MDQ_CLI_PATH;

int run(const std::string& args) {
  const int status = std::system((kCli + " " + args).c_str());
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

fs::path fresh_dir(const std::string& name) {
  fs::path d = fs::temp_directory_path() / ("mdq_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// value of "key=..." in summary-style text, NaN when absent
double parse_field(const std::string& text, const std::string& key) {
  const auto pos = text.find(key + "=");
  if (pos == std::string::npos) return std::nan("");
  return std::stod(text.substr(pos + key.size() + 1));
}

}  // namespace

TEST_CASE("pure exponential decay through the solve subcommand") {
  fs::path d = fresh_dir("decay");
  write_file(d / "c.json", R"({
    "problem": {"name": "fractional_linear", "sigma": 0.5, "intensity": 0.0,
                "horizon": 1.0, "discount": 1.0},
    "grid": {"dx": 0.25, "box_radius": 2.0, "dt": 0.1},
    "scheme": {"delta_rule": "optimal_constant"},
    "output": {"directory": ")" + (d / "out").string() + R"("}
  })");
  CHECK(run("solve --config " + (d / "c.json").string() +
            " > " + (d / "stdout.txt").string() + " 2>/dev/null") == 0);
  const std::string sum = slurp(d / "out" / "summary.txt");
  // u0 peaks at 1 and each implicit Euler step multiplies by 1/(1+dt) with
  // an explicit discount on the previous level: factor (1 - dt) per step
  CHECK(parse_field(sum, "final_sup") ==
        doctest::Approx(std::pow(0.9, 10)).epsilon(1e-9));
  CHECK(sum.find("stability_ok=yes") != std::string::npos);
  CHECK(fs::exists(d / "out" / "solution.csv"));
  CHECK(slurp(d / "stdout.txt").find("final_sup=") != std::string::npos);
}

TEST_CASE("stationary configuration is preserved exactly") {
  fs::path d = fresh_dir("stationary");
  write_file(d / "c.json", R"({
    "problem": {"name": "fractional_linear", "sigma": 0.5, "intensity": 0.0,
                "horizon": 0.5, "discount": 0.0},
    "grid": {"dx": 0.25, "box_radius": 2.0, "dt": 0.125},
    "scheme": {"delta_rule": "optimal_constant"},
    "output": {"directory": ")" + (d / "out").string() + R"("}
  })");
  CHECK(run("solve --config " + (d / "c.json").string() +
            " >/dev/null 2>&1") == 0);
  CHECK(parse_field(slurp(d / "out" / "summary.txt"), "final_sup") == 1.0);
}

TEST_CASE("explicit stepping past the stability bound is rejected upfront") {
  fs::path d = fresh_dir("cfl");
  write_file(d / "c.json", R"({
    "problem": {"name": "fractional_linear", "sigma": 1.5, "horizon": 0.5},
    "grid": {"dx": 0.0625, "box_radius": 1.0, "dt": 0.1},
    "scheme": {"delta_rule": "manual", "delta": 0.0625},
    "output": {"directory": ")" + (d / "out").string() + R"("}
  })");
  CHECK(run("solve --config " + (d / "c.json").string() + " >/dev/null 2> " +
            (d / "stderr.txt").string()) == 2);
  CHECK(slurp(d / "stderr.txt").find("largest stable dt") !=
        std::string::npos);
  CHECK(!fs::exists(d / "out"));  // rejected before any output
}

TEST_CASE("malformed and invalid configurations exit with code 2") {
  fs::path d = fresh_dir("badcfg");
  write_file(d / "broken.json", "{ not json");
  CHECK(run("solve --config " + (d / "broken.json").string() +
            " >/dev/null 2>&1") == 2);
  write_file(d / "unknown.json", R"({"grid": {"dy": 0.1}})");
  CHECK(run("solve --config " + (d / "unknown.json").string() +
            " >/dev/null 2>&1") == 2);
  write_file(d / "range.json", R"({"problem": {"sigma": 2.5}})");
  CHECK(run("rates --config " + (d / "range.json").string() +
            " >/dev/null 2>&1") == 2);
  CHECK(run("solve --config " + (d / "missing.json").string() +
            " >/dev/null 2>&1") == 2);
  CHECK(run("--config x.json >/dev/null 2>&1") == 2);  // missing subcommand
}

TEST_CASE("property checks pass on a jump diffusion") {
  fs::path d = fresh_dir("check");
  write_file(d / "c.json", R"({
    "problem": {"name": "fractional_linear", "sigma": 0.5, "horizon": 0.25},
    "grid": {"dx": 0.25, "box_radius": 2.0, "dt": 0.125},
    "scheme": {"theta": 1.0, "vartheta": 1.0, "delta_rule": "optimal_constant"},
    "output": {"directory": ")" + (d / "out").string() + R"("}
  })");
  CHECK(run("check --config " + (d / "c.json").string() + " > " +
            (d / "stdout.txt").string() + " 2>/dev/null") == 0);
  const std::string out = slurp(d / "stdout.txt");
  CHECK(out.find("all checks passed") != std::string::npos);
  CHECK(out.find("FAIL") == std::string::npos);
  CHECK(out.find("negative_weight_detection: pass") != std::string::npos);
}

TEST_CASE("stationary refinement study reports a degenerate pass") {
  fs::path d = fresh_dir("degenerate");
  write_file(d / "c.json", R"({
    "problem": {"name": "fractional_linear", "sigma": 0.5, "intensity": 0.0,
                "horizon": 0.25, "discount": 0.0},
    "grid": {"dx": 0.125, "box_radius": 1.0, "dt": 0.0625},
    "scheme": {"delta_rule": "optimal_constant"},
    "study": {"levels": 3, "delta_rule": "optimal_constant"},
    "output": {"directory": ")" + (d / "out").string() + R"("}
  })");
  CHECK(run("rates --config " + (d / "c.json").string() +
            " >/dev/null 2>&1") == 0);
  CHECK(slurp(d / "out" / "rates.csv").find("degenerate") !=
        std::string::npos);
}

TEST_CASE("solver failure inside a study exits with code 3") {
  fs::path d = fresh_dir("solverfail");
  write_file(d / "c.json", R"({
    "problem": {"name": "fractional_linear", "sigma": 1.5, "horizon": 0.25},
    "grid": {"dx": 0.125, "box_radius": 1.0, "dt": 0.0625},
    "scheme": {"theta": 1.0, "vartheta": 1.0, "delta_rule": "optimal_constant",
               "fixed_point_tol": 1e-14, "fixed_point_max_iter": 1},
    "output": {"directory": ")" + (d / "out").string() + R"("}
  })");
  CHECK(run("solve --config " + (d / "c.json").string() +
            " >/dev/null 2>&1") == 3);
  CHECK(!fs::exists(d / "out"));  // failed before any output
  CHECK(run("rates --config " + (d / "c.json").string() +
            " >/dev/null 2>&1") == 3);
  CHECK(slurp(d / "out" / "rates.csv").find("aborted") != std::string::npos);
}

TEST_CASE("iteration floor that masks convergence exits with code 4") {
  fs::path d = fresh_dir("ratefail");
  write_file(d / "c.json", R"({
    "problem": {"name": "fractional_linear", "sigma": 0.5, "horizon": 0.25},
    "grid": {"dx": 0.125, "box_radius": 2.0, "dt": 0.0625},
    "scheme": {"theta": 1.0, "vartheta": 1.0, "delta_rule": "optimal_constant",
               "fixed_point_tol": 3e-3},
    "study": {"levels": 4, "delta_rule": "optimal_constant"},
    "output": {"directory": ")" + (d / "out").string() + R"("}
  })");
  CHECK(run("rates --config " + (d / "c.json").string() + " > " +
            (d / "stdout.txt").string() + " 2>/dev/null") == 4);
  CHECK(slurp(d / "stdout.txt").find("FAIL") != std::string::npos);
  CHECK(slurp(d / "out" / "rates.csv").find("fail") != std::string::npos);
}

TEST_CASE("truncation and consistency sweeps write their reports") {
  fs::path d = fresh_dir("sweeps");
  write_file(d / "c.json", R"({
    "problem": {"name": "fractional_linear", "sigma": 0.5, "horizon": 0.25},
    "grid": {"dx": 0.125, "box_radius": 1.0, "dt": 0.0625},
    "scheme": {"theta": 1.0, "vartheta": 1.0, "delta_rule": "optimal_constant"},
    "study": {"levels": 3, "delta_rule": "optimal_constant",
              "truncation_sweep": [0.5, 0.25], "truncation_reference": 0.125,
              "consistency": true},
    "output": {"directory": ")" + (d / "out").string() + R"("}
  })");
  CHECK(run("rates --config " + (d / "c.json").string() + " > " +
            (d / "stdout.txt").string() + " 2>/dev/null") == 0);
  const std::string out = slurp(d / "stdout.txt");
  CHECK(out.find("truncation sweep:") != std::string::npos);
  CHECK(out.find("consistency quadrature:") != std::string::npos);
  CHECK(out.find("FAIL") == std::string::npos);
  CHECK(slurp(d / "out" / "truncation.csv").find("# slope=") !=
        std::string::npos);
  int ingredients = 0;
  std::istringstream csv(slurp(d / "out" / "consistency.csv"));
  std::string line;
  while (std::getline(csv, line))
    if (line.rfind("# ", 0) == 0) ++ingredients;
  CHECK(ingredients == 4);
  // a sweep radius finer than the grid must be rejected before any output
  write_file(d / "bad.json", R"({
    "grid": {"dx": 0.125, "box_radius": 1.0, "dt": 0.0625},
    "study": {"truncation_sweep": [0.0625], "truncation_reference": 0.03125},
    "output": {"directory": ")" + (d / "never").string() + R"("}
  })");
  CHECK(run("rates --config " + (d / "bad.json").string() +
            " >/dev/null 2>&1") == 2);
  CHECK(!fs::exists(d / "never"));
}

TEST_CASE("exact reference mode is rejected on the command line") {
  fs::path d = fresh_dir("exactref");
  write_file(d / "c.json", R"({
    "problem": {"name": "fractional_linear", "sigma": 0.5, "horizon": 0.25},
    "grid": {"dx": 0.125, "box_radius": 1.0, "dt": 0.0625},
    "scheme": {"theta": 1.0, "vartheta": 1.0, "delta_rule": "optimal_constant"},
    "study": {"reference": "exact", "delta_rule": "optimal_constant"},
    "output": {"directory": ")" + (d / "out").string() + R"("}
  })");
  CHECK(run("rates --config " + (d / "c.json").string() +
            " >/dev/null 2>&1") == 2);
}

TEST_CASE("thread count does not change the written solution") {
  fs::path d = fresh_dir("threads");
  write_file(d / "c.json", R"({
    "problem": {"name": "two_player_nonconvex", "sigma": 1.5, "horizon": 0.25},
    "grid": {"dx": 0.125, "box_radius": 1.0, "dt": 0.0625},
    "scheme": {"theta": 1.0, "vartheta": 1.0, "delta_rule": "optimal_constant"},
    "output": {"directory": ")" + (d / "out1").string() + R"("}
  })");
  CHECK(run("solve --config " + (d / "c.json").string() +
            " --threads 1 >/dev/null 2>&1") == 0);
  CHECK(run("solve --config " + (d / "c.json").string() + " --out " +
            (d / "out4").string() + " --threads 4 >/dev/null 2>&1") == 0);
  CHECK(slurp(d / "out1" / "solution.csv") ==
        slurp(d / "out4" / "solution.csv"));
  CHECK(!slurp(d / "out1" / "solution.csv").empty());
}

TEST_CASE("level count override reaches the study") {
  fs::path d = fresh_dir("override");
  write_file(d / "c.json", R"({
    "problem": {"name": "fractional_linear", "sigma": 0.5, "horizon": 0.25},
    "grid": {"dx": 0.125, "box_radius": 1.0, "dt": 0.0625},
    "scheme": {"theta": 1.0, "vartheta": 1.0, "delta_rule": "optimal_constant"},
    "study": {"levels": 3, "delta_rule": "optimal_constant"},
    "output": {"directory": ")" + (d / "out").string() + R"("}
  })");
  CHECK(run("rates --config " + (d / "c.json").string() +
            " --level-count 4 >/dev/null 2>&1") == 0);
  int rows = 0;
  std::istringstream csv(slurp(d / "out" / "rates.csv"));
  std::string line;
  while (std::getline(csv, line))
    if (!line.empty() && line[0] != '#' && line.find("dx") == std::string::npos)
      ++rows;
  CHECK(rows == 4);
  // the same override must fail validation when out of range
  CHECK(run("rates --config " + (d / "c.json").string() +
            " --level-count 1 >/dev/null 2>&1") == 2);
}

TEST_CASE("help text exits cleanly") {
  CHECK(run("--help >/dev/null 2>&1") == 0);
  CHECK(run("solve --help >/dev/null 2>&1") == 0);
}
