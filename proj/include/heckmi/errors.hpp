#pragma once

#include <stdexcept>
#include <string>

namespace heckmi {

/// Argument outside the mathematical domain of a function (p = 0 for a
/// quantile, |rho| >= 1, a negative-definite covariance, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Input that violates a documented contract (non-symmetric matrix,
/// mismatched dimensions).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Fewer than two usable clusters reached a meta-analysis or pooling step.
class PoolingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The imputation pipeline could not produce a completed dataset.
class ImputationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration, schema or input file. Maps to CLI exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace heckmi
