#pragma once

#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "heckmi/linalg.hpp"

namespace heckmi {

enum class Family { continuous, binary };

const char* to_string(Family f);
Family family_from_string(const std::string& s);

/// One cluster's rows. y is NaN where r == 0.
struct ClusterData {
  Matrix x_outcome;    ///< n x p, intercept included
  Matrix x_selection;  ///< n x q, intercept and exclusion restriction included
  Vector y;
  Eigen::VectorXi r;
  std::string cluster_id;

  Eigen::Index n() const { return r.size(); }
  Eigen::Index n_observed() const { return r.sum(); }
};

/// Which parameters a model carries and where they sit in the packed
/// vector [beta_o | beta_s | log_sigma | atanh_rho]. q == 0 drops the
/// selection equation (outcome-only model); has_rho == false pins rho to 0.
struct ModelLayout {
  Family family = Family::continuous;
  Eigen::Index p = 0;
  Eigen::Index q = 0;
  bool has_rho = true;

  bool has_sigma() const { return family == Family::continuous; }
  Eigen::Index sigma_index() const { return p + q; }
  Eigen::Index rho_index() const { return p + q + (has_sigma() ? 1 : 0); }
  Eigen::Index size() const { return p + q + (has_sigma() ? 1 : 0) + (has_rho ? 1 : 0); }
};

/// Heckman parameters on the unconstrained scale.
struct HeckmanParams {
  Vector beta_o;
  Vector beta_s;
  double log_sigma = 0.0;
  double atanh_rho = 0.0;

  double sigma() const;
  double rho() const;

  Vector pack(const ModelLayout& layout) const;
  static HeckmanParams unpack(const ModelLayout& layout, const Vector& theta);
};

struct ClusterFit {
  std::string cluster_id;
  ModelLayout layout;
  HeckmanParams params;
  /// Covariance of the packed parameter vector (PSD).
  Matrix vcov;
  bool converged = false;
  bool hessian_repaired = false;
  Eigen::Index n_obs = 0;
  Eigen::Index n = 0;

  Family family() const { return layout.family; }
};

struct NonEstimable {
  std::string cluster_id;
  std::string reason;
};

using FitOutcome = std::variant<ClusterFit, NonEstimable>;

/// Thrown by two_step_start when no start can be computed.
class NonEstimableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FitOptions {
  /// Fit with rho fixed at 0.
  bool fix_rho_zero = false;
  /// Drop the selection equation entirely (MAR imputation model).
  bool outcome_only = false;
  /// Require n_observed >= 2 (p + q + 2).
  bool enforce_min_data = true;
  /// |rho-hat| at or beyond this is treated as a boundary fit.
  double rho_bound = 0.99;
  int max_iterations = 500;
};

ModelLayout layout_for(const ClusterData& data, Family family, const FitOptions& options = {});

/// Log-likelihood of the packed parameter vector; fills `gradient` when
/// non-null. Returns -inf (or NaN) for parameters where it is not finite.
double loglik(const ModelLayout& layout, const Vector& theta, const ClusterData& data,
              Vector* gradient = nullptr);

/// Type-II tobit log-likelihood (bivariate-normal errors).
double loglik_continuous(const HeckmanParams& params, const ClusterData& data);
/// Bivariate probit with sample selection.
double loglik_binary(const HeckmanParams& params, const ClusterData& data);

/// Minimum observed rows for a stage-1 fit: 2 (p + q + 2).
Eigen::Index minimum_observed(Eigen::Index p, Eigen::Index q);

/// Two-step starting values. Throws NonEstimableError when the selection
/// probit (or the outcome regression) cannot be estimated.
HeckmanParams two_step_start(const ClusterData& data, Family family,
                             const FitOptions& options = {});

/// Maximum-likelihood fit on the transformed scale.
FitOutcome fit_cluster(const ClusterData& data, Family family, const FitOptions& options = {});

}  // namespace heckmi
