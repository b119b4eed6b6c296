#pragma once

#include <stdexcept>
#include <string>

namespace dbsc {

// Raised for malformed inputs and violated preconditions. Maps to CLI exit code 2.
class validation_error : public std::runtime_error {
public:
  explicit validation_error(const std::string& what) : std::runtime_error(what) {}
};

// Raised when an optimizer fails to reach its certificate tolerance. Maps to CLI exit code 3.
class solver_error : public std::runtime_error {
public:
  solver_error(const std::string& what, double best_residual)
      : std::runtime_error(what), best_residual_(best_residual) {}

  double best_residual() const { return best_residual_; }

private:
  double best_residual_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw validation_error(message);
}

}  // namespace dbsc
