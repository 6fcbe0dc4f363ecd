#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "heckmi/meta.hpp"
#include "heckmi/mice.hpp"
#include "heckmi/sim.hpp"

namespace heckmi {

/// Parsed run configuration. See docs/config.md for the schema.
struct RunConfig {
  std::uint64_t seed = 1;
  std::optional<int> workers;
  int m = 5;
  int iterations = 10;
  PsiStructure psi_structure = PsiStructure::full;
  std::string cluster_column = "cluster";
  std::vector<ImputationSpec> specs;
  /// Spec names in visiting order; empty means declaration order.
  std::vector<std::string> visit_order;
  std::vector<ScenarioConfig> scenarios;
  std::string output_dir;
};

/// Parses JSON text. Unknown keys, wrong types and out-of-range values throw
/// ValidationError with the offending key path.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

/// Specs in visiting order.
std::vector<ImputationSpec> ordered_specs(const RunConfig& config);

}  // namespace heckmi
