#pragma once

// Error contract shared by all modules.
//
// Rejected configurations (bad parameters, violated preconditions) throw
// ConfigError.  Numerical failures carry enough state to diagnose them:
// IntegrationError keeps the partial sum, SolverError the per-iteration
// update history, MonotonicityError the offending point.

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mdq {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A shell of the measure quadrature failed to converge within its budget.
class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(const std::string& what, Eigen::VectorXd partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const Eigen::VectorXd& partial_sum() const { return partial_; }

 private:
  Eigen::VectorXd partial_;
};

// Implicit fixed-point solve failed to converge; history holds the
// max-norm update of every iteration performed.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, int time_index, std::vector<double> history)
      : std::runtime_error(what), time_index_(time_index), history_(std::move(history)) {}
  int time_index() const { return time_index_; }
  const std::vector<double>& iteration_history() const { return history_; }

 private:
  int time_index_;
  std::vector<double> history_;
};

// A scheme ingredient that must be nonnegative (quadrature weight, scheme
// coefficient, diffusion diagonal) came out negative.
class MonotonicityError : public std::runtime_error {
 public:
  explicit MonotonicityError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mdq
