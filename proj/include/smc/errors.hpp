#pragma once

#include <stdexcept>
#include <string>

namespace smc {

/// Thrown when every importance weight in a system is zero (or would be).
/// Positivity of the potentials and adjustment functions is a model
/// contract; an all-zero weight vector means the model or proposal is
/// being misused, so this is a hard error rather than a silent reset.
class WeightDegeneracyError : public std::runtime_error {
 public:
  explicit WeightDegeneracyError(const std::string& what)
      : std::runtime_error(what) {}
};

/// Thrown when a structural invariant of a particle system is violated
/// (non-finite log-weight, out-of-range ancestor index, time mismatch).
class InvariantError : public std::logic_error {
 public:
  explicit InvariantError(const std::string& what) : std::logic_error(what) {}
};

/// Thrown when the strong-mixing constants of a model degenerate to zero.
class MixingViolation : public std::runtime_error {
 public:
  explicit MixingViolation(const std::string& what)
      : std::runtime_error(what) {}
};

}  // namespace smc
