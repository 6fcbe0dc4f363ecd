#pragma once

#include <optional>
#include <string>
#include <vector>

#include "heckmi/heckman.hpp"
#include "heckmi/meta.hpp"
#include "heckmi/rng.hpp"

namespace heckmi {

/// One draw of a block's marginal mean and between-cluster covariance.
struct DrawnBlock {
  Vector theta_star;
  Matrix psi_star;
  /// Frobenius distance the PSD projection moved the raw psi draw.
  double projection_distance = 0.0;
};

struct DrawnMarginal {
  ModelLayout layout;
  DrawnBlock block_o;
  std::optional<DrawnBlock> block_s;
  std::optional<DrawnBlock> log_sigma;
  std::optional<DrawnBlock> atanh_rho;
};

struct DrawnClusterParams {
  std::string cluster_id;
  Vector beta_o_star;
  Vector beta_s_star;
  /// Absent for the binary family.
  std::optional<double> sigma_star;
  double rho_star = 0.0;
  /// True when the draw came from the marginal level only.
  bool from_marginal = false;
};

/// Ridge added to covariance matrices before inversion in draw_cluster.
inline constexpr double kPrecisionRidge = 1e-8;

/// Theta* ~ N(theta_hat, S_theta) and psi* ~ N(psi_hat, S_psi) per block,
/// psi* projected to PSD (scalar psi* truncated at 0).
DrawnMarginal draw_marginal(const MarginalModel& model, RngStream& rng);

DrawnBlock draw_block(const MetaFit& fit, RngStream& rng);

/// Precision-weighted combination of Theta* with the cluster's own estimate
/// (blockwise); fit == nullptr draws from N(Theta*, psi*).
DrawnClusterParams draw_cluster(const ClusterFit* fit, const DrawnMarginal& marginal, RngStream& rng,
                                const std::string& cluster_id = {});

/// Mean and covariance of the conditional cluster draw for one block.
struct BlockPosterior {
  Vector mean;
  Matrix cov;
};
BlockPosterior block_posterior(const Vector& theta_star, const Matrix& psi_star,
                               const Vector* estimate, const Matrix* within);

/// mu = x_o b_o - rho sigma phi(x_s b_s) / Phi(-x_s b_s).
double continuous_imputation_mean(double eta_o, double eta_s, double sigma, double rho);
/// p = Phi2(x_o b_o, -x_s b_s; -rho) / Phi(-x_s b_s), clamped to [0, 1].
/// Falls back to Phi(x_o b_o) when Phi(-x_s b_s) < 1e-300 and sets *fallback.
double binary_imputation_probability(double eta_o, double eta_s, double rho, bool* fallback = nullptr);

/// One draw from N(mu, sigma*^2) per row (rows are r == 0 rows).
Vector impute_continuous(const Matrix& x_outcome, const Matrix& x_selection,
                         const DrawnClusterParams& params, RngStream& rng);
/// One Bernoulli(p*) draw per row.
Vector impute_binary(const Matrix& x_outcome, const Matrix& x_selection,
                     const DrawnClusterParams& params, RngStream& rng,
                     int* fallback_count = nullptr);

}  // namespace heckmi
