#pragma once

#include <optional>
#include <string>
#include <vector>

#include "heckmi/heckman.hpp"
#include "heckmi/linalg.hpp"

namespace heckmi {

enum class PsiStructure { full, diagonal };

PsiStructure psi_structure_from_string(const std::string& s);
const char* to_string(PsiStructure s);

/// Per-cluster estimates of a d-vector with their within-cluster covariances.
struct MetaInput {
  std::vector<Vector> estimates;
  std::vector<Matrix> vcovs;

  std::size_t size() const { return estimates.size(); }
  Eigen::Index dim() const { return estimates.empty() ? 0 : estimates.front().size(); }
};

/// Random-effects meta-analysis y_i ~ N(theta, psi + S_i).
struct MetaFit {
  Vector theta_hat;
  Matrix psi_hat;
  /// Sampling covariance of theta_hat: (sum_i (psi + S_i)^-1)^-1.
  Matrix s_theta;
  /// Sampling covariance of vech(psi_hat).
  Matrix s_psi;
  double restricted_loglik = 0.0;
  bool converged = false;
  /// REML failed and method-of-moments estimates were returned instead.
  bool moments_fallback = false;
  std::size_t n_clusters = 0;

  Eigen::Index dim() const { return theta_hat.size(); }
};

/// Restricted log-likelihood of the random-effects model at a given psi.
double restricted_loglik(const MetaInput& input, const Matrix& psi);

/// Multivariate REML with psi = L L^T (L lower triangular, log diagonal).
/// Delegates to reml_univariate when d == 1. Throws PoolingError for fewer
/// than two clusters.
MetaFit reml_multivariate(const MetaInput& input, PsiStructure structure = PsiStructure::full);

/// Scalar REML; psi-hat is floored at zero. s_psi is the inverse expected
/// restricted information.
MetaFit reml_univariate(const MetaInput& input);

/// Marginal (population-level) Heckman model pooled over clusters.
struct MarginalModel {
  ModelLayout layout;
  MetaFit block_o;
  std::optional<MetaFit> block_s;
  std::optional<MetaFit> log_sigma;
  std::optional<MetaFit> atanh_rho;
  std::vector<std::string> contributing_clusters;

  Family family() const { return layout.family; }
};

/// Pools the outcome coefficients, selection coefficients, log sigma and
/// atanh rho in four independent meta-analyses, each using only its own
/// sub-block of the cluster covariance. NonEstimable entries are skipped.
MarginalModel pool_heckman(const std::vector<FitOutcome>& fits,
                           PsiStructure structure = PsiStructure::full);
MarginalModel pool_heckman(const std::vector<ClusterFit>& fits,
                           PsiStructure structure = PsiStructure::full);

}  // namespace heckmi
