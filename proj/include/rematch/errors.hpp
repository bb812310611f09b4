#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rematch {

/// Precondition violation on user-supplied data (shapes, ranges, tags).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UnsupportedDimension : public InvalidArgument {
 public:
  explicit UnsupportedDimension(int dim)
      : InvalidArgument("unsupported spatial dimension " + std::to_string(dim) +
                        " (expected 2 or 3)"),
        dim_(dim) {}
  int dim() const noexcept { return dim_; }

 private:
  int dim_;
};

/// A linear system stayed singular after the ridge fallback.
class SingularSystem : public std::runtime_error {
 public:
  SingularSystem(const std::string& what, double condition, int part = -1)
      : std::runtime_error(what), condition_(condition), part_(part) {}

  double condition_estimate() const noexcept { return condition_; }
  /// Part index for per-part solves, -1 otherwise.
  int part() const noexcept { return part_; }

 private:
  double condition_;
  int part_;
};

/// Numerical blow-up: an ODE state or a training loss became non-finite.
class NumericalDivergence : public std::runtime_error {
 public:
  NumericalDivergence(const std::string& what, std::size_t index)
      : std::runtime_error(what), index_(index) {}
  /// Integration step or training iteration where the blow-up was detected.
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// Solver failure raised while evaluating the matching loss at time t.
class TimedSolveError : public std::runtime_error {
 public:
  TimedSolveError(const std::string& what, double t)
      : std::runtime_error(what), t_(t) {}
  double time() const noexcept { return t_; }

 private:
  double t_;
};

/// Malformed or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rematch
