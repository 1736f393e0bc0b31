#pragma once

#include <stdexcept>
#include <string>

namespace superbranch {

// Argument outside the mathematical domain of an operation (z < 0, ||f|| > k, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Structurally invalid input: bad shapes, unnormalized weights, broken invariants.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// k below the smallest density for which the particle construction has
// non-negative rates and mixture weights.
class DensityTooSmall : public ValidationError {
 public:
  DensityTooSmall(const std::string& constraint, long k, long k_min)
      : ValidationError("density too small: k=" + std::to_string(k) + " < k_min=" +
                        std::to_string(k_min) + " (" + constraint + ")"),
        k_(k),
        k_min_(k_min) {}
  long k() const noexcept { return k_; }
  long k_min() const noexcept { return k_min_; }

 private:
  long k_;
  long k_min_;
};

// Requested time or key not present; no interpolation is ever attempted.
class LookupError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Broken internal contract, e.g. a thinning factor above its declared bound.
class InvariantViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, double residual)
      : std::runtime_error(what + " (last residual " + std::to_string(residual) + ")"),
        residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class InstabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace superbranch
