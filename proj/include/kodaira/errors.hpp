#pragma once

#include <stdexcept>
#include <string>

namespace kodaira {

/// Precondition on an argument failed (range, size, sign).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Evaluation outside a function's declared domain, or non-finite result.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A type invariant (Hermiticity, positivity, ...) does not hold.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Problem too large for the configured limits.
class ResourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Iterative method failed to converge; carries the last residual.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, double residual)
      : std::runtime_error(what + " (residual " + std::to_string(residual) + ")"),
        residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// A truncated computation cannot meet the requested accuracy.
class AccuracyError : public std::runtime_error {
 public:
  AccuracyError(const std::string& what, double bound)
      : std::runtime_error(what + " (error bound " + std::to_string(bound) + ")"),
        bound_(bound) {}
  double bound() const noexcept { return bound_; }

 private:
  double bound_;
};

}  // namespace kodaira
