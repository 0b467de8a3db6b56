#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ebmon {

// Bad or inconsistent input. The CLI maps this family to exit code 2.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure: non-convergence, singular systems. CLI exit code 3.
class NumericalError : public std::runtime_error {
public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-convergence that carries the last iterate, so callers can inspect
// where the optimizer was heading (quasi-separation shows up as coefficients
// drifting to +/-inf).
class ConvergenceError : public NumericalError {
public:
  ConvergenceError(const std::string& msg, std::vector<double> last)
      : NumericalError(msg), last_iterate(std::move(last)) {}
  std::vector<double> last_iterate;
};

}  // namespace ebmon
