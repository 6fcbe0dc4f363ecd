#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "heckmi/dataset.hpp"
#include "heckmi/heckman.hpp"
#include "heckmi/meta.hpp"
#include "heckmi/rng.hpp"

namespace heckmi {

enum class ImputationMethod { heckman_2l, mar_2l, heckman_1l };

const char* to_string(ImputationMethod m);
ImputationMethod imputation_method_from_string(const std::string& s);

/// Declaration of one incomplete variable and its two equations.
struct ImputationSpec {
  std::string name;
  std::string target;
  Family family = Family::continuous;
  std::vector<std::string> outcome_predictors;
  /// Must contain at least one column absent from outcome_predictors (the
  /// exclusion restriction) for the Heckman methods.
  std::vector<std::string> selection_predictors;
  std::string cluster_column = "cluster";
  ImputationMethod method = ImputationMethod::heckman_2l;

  bool uses_selection() const { return method != ImputationMethod::mar_2l; }
};

/// Structural checks. Throws ValidationError citing the imputation spec name.
void validate_spec(const ImputationSpec& spec);
/// Structural checks plus column existence and completeness of predictors
/// that are not themselves imputation targets.
void validate_spec(const ImputationSpec& spec, const TabularDataset& data,
                   const std::vector<std::string>& imputed_columns = {});

struct EngineOptions {
  PsiStructure psi_structure = PsiStructure::full;
  /// Threads for imputation chains and stage-1 fits.
  int workers = 1;
};

enum class ClusterStatus { estimable, fallback };

struct ClusterReport {
  std::string cluster;
  std::size_t n_rows = 0;
  std::size_t n_observed = 0;
  ClusterStatus status = ClusterStatus::estimable;
  std::string reason;
  std::optional<double> rho_hat;
  std::optional<double> rho_lower;
  std::optional<double> rho_upper;
};

struct ClusterPartition {
  std::vector<std::string> estimable;
  std::vector<std::string> fallback;
  std::vector<ClusterReport> clusters;
};

struct SpecReport {
  std::string spec_name;
  std::string target;
  ImputationMethod method = ImputationMethod::heckman_2l;
  std::vector<ClusterReport> clusters;
  /// Original labels coded as 0 and 1 when a binary target was recoded.
  std::optional<std::pair<std::string, std::string>> binary_coding;
  /// Largest PSD projection distance of each psi* draw, per imputation.
  std::vector<double> projection_distances;
  int binary_probability_fallbacks = 0;
  std::size_t n_missing = 0;
};

/// m completed copies of the input plus provenance.
struct MIDataset {
  int m = 0;
  std::vector<TabularDataset> completed;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> rng_path;
  int iterations = 0;
  std::vector<ImputationSpec> specs;
  std::vector<SpecReport> reports;
};

/// Splits clusters into those that can carry a stage-1 fit and those that
/// must borrow entirely from the marginal model (target 100% missing, or
/// fewer observed rows than the minimum-data rule). Throws ImputationError
/// when no cluster is estimable.
ClusterPartition classify_clusters(const TabularDataset& data, const ImputationSpec& spec);

/// Fits stage 1 once, then draws m imputations independently.
MIDataset impute_univariate(const TabularDataset& data, const ImputationSpec& spec, int m,
                            const RngStream& rng, const EngineOptions& options = {});

/// Chained equations over several specs, visited in declaration order.
/// Stage-1 models are refitted at every visit.
MIDataset impute_chained(const TabularDataset& data, const std::vector<ImputationSpec>& specs, int m,
                         int iterations, const RngStream& rng, const EngineOptions& options = {});

}  // namespace heckmi
