#pragma once

#include <vector>

#include "heckmi/linalg.hpp"

namespace heckmi {

struct RegressionFit {
  Vector beta;
  Matrix vcov;
  /// Residual variance (least squares only).
  double sigma2 = 0.0;
  bool ok = false;
};

/// Ordinary least squares with classical covariance sigma^2 (X'X)^-1 where
/// sigma^2 = RSS / (n - p). ok = false when X is rank deficient or n <= p.
RegressionFit least_squares(const Matrix& x, const Vector& y);

/// Probit maximum likelihood by Newton-Raphson with step halving. vcov is
/// the inverse observed information. ok = false on (quasi-)separation,
/// degenerate outcomes or non-convergence.
RegressionFit probit(const Matrix& x, const Vector& y01);

double probit_loglik(const Matrix& x, const Vector& y01, const Vector& beta);

}  // namespace heckmi
