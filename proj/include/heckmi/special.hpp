#pragma once

// Scalar special functions for the normal distribution family.

namespace heckmi {

double std_normal_pdf(double x);
double log_std_normal_pdf(double x);

/// Phi(x). Accepts +-infinity.
double std_normal_cdf(double x);

/// log Phi(x), accurate far into the lower tail where Phi underflows.
double log_std_normal_cdf(double x);

/// Phi^{-1}(p) for 0 < p < 1. Throws DomainError otherwise.
double std_normal_quantile(double p);

/// Phi_2(a, b; rho) = P(X <= a, Y <= b) for a standard bivariate normal
/// with correlation rho. Gauss-Legendre quadrature of the Drezner-Wesolowsky
/// / Genz form, absolute error well below 1e-10. Results below 1e-7 are
/// recomputed by log-scaled 1-D quadrature so that they keep relative
/// accuracy. Symmetric in (a, b) bit-for-bit.
double bvn_cdf(double a, double b, double rho);

/// log Phi_2(a, b; rho), finite wherever the probability is positive.
double log_bvn_cdf(double a, double b, double rho);

/// Standard bivariate normal density.
double bvn_pdf(double a, double b, double rho);

/// phi(x) / Phi(x). Uses a continued fraction below x = -8.
double inverse_mills(double x);

double fisher_z(double rho);
double fisher_z_inv(double z);

}  // namespace heckmi
