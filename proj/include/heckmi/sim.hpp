#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "heckmi/dataset.hpp"
#include "heckmi/heckman.hpp"
#include "heckmi/meta.hpp"
#include "heckmi/rng.hpp"

namespace heckmi {

enum class ErrorModel { bvn, skew_t, explicit_selection };
enum class Method { cca, heckman_1l, mar_2l, heckman_2l };

const char* to_string(ErrorModel e);
ErrorModel error_model_from_string(const std::string& s);
const char* to_string(Method m);
Method method_from_string(const std::string& s);

/// Fixed data-generating constants.
struct TrueParams {
  std::array<double, 3> beta_o{0.3, 1.0, 1.0};
  std::array<double, 4> beta_s{-0.8, 1.3, -0.7, 1.2};
  double psi_coef = 0.4;
  double psi_erv = 0.2;
  double log_sigma_sd = 0.05;
  double re_cross_factor = 0.4;
  double treatment_prob = 0.6;
  double cluster_mean_var = 0.2;
  double cluster_mean_cov = 0.015;
  double x3_variance = 0.5;
  double systematic_fraction = 0.2;
  double explicit_slope = 0.3;
  std::array<double, 2> skew_alpha{-2.0, 6.0};
  double skew_df = 4.0;
};

struct ScenarioConfig {
  std::string name = "base";
  Family family = Family::continuous;
  double rho = 0.6;
  int n_clusters = 10;
  int cluster_size = 1000;
  ErrorModel error_model = ErrorModel::bvn;
  int n_reps = 100;
  std::uint64_t seed = 1;
  std::vector<Method> methods{Method::cca, Method::heckman_1l, Method::mar_2l, Method::heckman_2l};
  int m = 5;
  PsiStructure psi_structure = PsiStructure::full;
};

/// Throws ValidationError on out-of-range fields.
void validate(const ScenarioConfig& config);

struct Truth {
  std::vector<double> y_star;
  std::vector<double> r_star;
  /// Clusters (0-based) whose outcome was removed entirely.
  std::vector<int> systematic_clusters;
  /// Cluster-specific outcome coefficients, one row per cluster.
  std::vector<std::array<double, 3>> beta_o_cluster;
  std::vector<double> sigma_cluster;
};

struct GeneratedData {
  /// Columns cluster, X1, X2, X3, y, r. y is missing where r == 0.
  TabularDataset data;
  Truth truth;
};

GeneratedData generate(const ScenarioConfig& config, RngStream& rng, const TrueParams& truth = {});

inline constexpr int kEstimands = 6;
const std::array<std::string, kEstimands>& estimand_names();
/// True values of beta0..2 and sd_psi00..22.
std::array<double, kEstimands> estimand_truth(const TrueParams& truth = {});

/// Estimates for one analysed dataset (or a pooled set of them).
struct ReplicateResult {
  Method method = Method::cca;
  std::array<double, kEstimands> estimate{};
  /// Standard errors and Wald bounds for the three coefficients.
  std::array<double, 3> se{};
  std::array<double, 3> lower{};
  std::array<double, 3> upper{};
  bool converged = false;
  double seconds = 0.0;
  std::string message;
};

/// Per-cluster regression (least squares or probit) followed by REML
/// meta-analysis of the three outcome coefficients. Clusters with no rows
/// or a failed regression are dropped.
ReplicateResult analyze_two_stage(const TabularDataset& completed, Family family,
                                  PsiStructure structure = PsiStructure::full,
                                  const std::string& cluster_column = "cluster");

struct RubinEstimate {
  double qbar = 0.0;
  double within = 0.0;
  double between = 0.0;
  double total = 0.0;
  /// +inf when the between-imputation variance is zero.
  double df = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

/// Rubin's rules for one scalar. Throws PoolingError for fewer than two values.
RubinEstimate rubin_scalar(const std::vector<double>& estimates, const std::vector<double>& ses);

/// Rubin's rules per coefficient; the random-effect SDs are averaged.
/// Throws PoolingError for fewer than two results.
ReplicateResult rubin_pool(const std::vector<ReplicateResult>& per_imputation);

/// One method applied to one generated dataset; failures are caught and
/// reported through converged = false.
ReplicateResult run_method(const GeneratedData& generated, const ScenarioConfig& config, Method method,
                           const RngStream& rng);

struct MetricRow {
  std::string scenario;
  std::string method;
  std::string estimand;
  std::string measure;
  double value = 0.0;
  double mcse = 0.0;
};

struct MethodSummary {
  Method method = Method::cca;
  int n_reps = 0;
  int n_run = 0;
  double mean_seconds = 0.0;
};

struct ScenarioMetrics {
  ScenarioConfig config;
  std::vector<MethodSummary> summaries;
  std::vector<MetricRow> rows;
  /// results[rep][method index] in config.methods order.
  std::vector<std::vector<ReplicateResult>> results;
};

/// Morris-style performance measures over converged replicates: bias,
/// empse, rmse (all estimands) and coverage, width, modse (coefficients),
/// each with its Monte Carlo SE, plus run_pct.
std::vector<MetricRow> compute_metrics(const std::string& scenario, Method method,
                                       const std::vector<ReplicateResult>& results,
                                       const std::array<double, kEstimands>& truth);

/// Replicates run on `workers` threads; output is independent of workers.
ScenarioMetrics run_scenario(const ScenarioConfig& config, int workers = 1);

}  // namespace heckmi
