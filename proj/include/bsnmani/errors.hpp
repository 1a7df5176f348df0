#pragma once

#include <stdexcept>
#include <string>

namespace bsnmani {

// Base class for all library errors.  Subclasses exist so callers (and the
// CLI) can distinguish bad input from numerical breakdown.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Mismatched or impossible dimensions (non-square input, q > N, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Out-of-domain scalar parameter (variance <= 0, rate <= 0, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Rank-deficient or non-SPD matrix where a full-rank/SPD one is required.
class SingularityError : public Error {
 public:
  using Error::Error;
};

// Inconsistent run configuration (burn-in >= iterations, folds < 2, ...).
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

// Non-finite values encountered where finiteness is an invariant.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Quadrature could not produce a usable value (all nodes bad, sum <= 0, ...).
class IntegrationError : public Error {
 public:
  using Error::Error;
};

// A requested metric is undefined on the given input (zero variance R^2, ...).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// Malformed input files or values that fail validation on load.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace bsnmani
