#pragma once

#include <functional>
#include <string>

#include "heckmi/linalg.hpp"

namespace heckmi {

/// Objective to be minimised. `gradient` is optional; when empty the
/// optimizer differentiates `value` by central differences. Non-finite
/// values are treated as +infinity (the line search backs off).
struct Objective {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
};

struct MinimizeOptions {
  int max_iterations = 500;
  /// Converged when max|g_i| <= gradient_tolerance * max(1, |f|).
  double gradient_tolerance = 1e-6;
  bool compute_hessian = true;
};

struct MinimizeResult {
  Vector x;
  double value = 0.0;
  Vector gradient;
  /// Inverse Hessian of the objective at x (for a negative log-likelihood:
  /// the inverse observed information), PSD-projected.
  Matrix inverse_hessian;
  bool converged = false;
  bool hessian_repaired = false;
  int iterations = 0;
  std::string message;
};

Vector numeric_gradient(const std::function<double(const Vector&)>& f, const Vector& x);

/// Central-difference Hessian. Differences the analytic gradient when one is
/// supplied (step max(1e-5, 1e-5|x_i|)); otherwise uses second differences of
/// the value with step max(1e-4, 1e-4|x_i|).
Matrix numeric_hessian(const Objective& objective, const Vector& x);

/// BFGS with a strong-Wolfe line search.
MinimizeResult minimize(const Objective& objective, const Vector& x0,
                        const MinimizeOptions& options = {});

}  // namespace heckmi
