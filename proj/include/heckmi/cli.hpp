#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace heckmi {

enum ExitCode : int { kExitOk = 0, kExitValidation = 2, kExitComputation = 3 };

/// Command-line overrides shared by all commands.
struct CliOptions {
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<int> m;
  std::optional<int> reps;
  std::optional<std::string> out;
  bool emit_plot_data = false;
  bool dry_run = false;
};

int cmd_impute(const std::string& data_path, const std::string& config_path, const CliOptions& options,
               std::ostream& log);
int cmd_simulate(const std::string& config_path, const CliOptions& options, std::ostream& log);
/// Scores imp_<k>.csv files in imputed_dir against a complete truth table.
/// When incomplete_path is given only the cells missing there are scored.
int cmd_evaluate(const std::string& truth_path, const std::string& imputed_dir,
                 const std::optional<std::string>& incomplete_path, const CliOptions& options, std::ostream& log);

/// Full command-line entry point.
int run_cli(int argc, const char* const* argv);

}  // namespace heckmi
