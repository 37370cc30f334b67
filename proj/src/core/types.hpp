#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <cstdint>

namespace flowlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Invalid input: bad preset strings, inconsistent dimensions, violated
// preconditions. Maps to exit code 2 at the tool boundary.
struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure at runtime: blow-up guard, singular diffusion matrix,
// exhausted ladders, non-converged inversions. Maps to exit code 3.
struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
  numeric_error(const std::string& msg, std::int64_t step)
      : std::runtime_error(msg), step_index(step) {}
  std::int64_t step_index = -1;
};

inline void require_config(bool ok, const std::string& msg) {
  if (!ok) throw config_error(msg);
}

}  // namespace flowlab
