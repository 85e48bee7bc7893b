#pragma once

#include "edm2d/app/config.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace edm2d::app {

/// Inputs that come from the command line rather than the config file.
struct CommandInputs {
  std::vector<std::filesystem::path> checkpoints;  // sample, smc, diagnose, eval
  std::optional<std::filesystem::path> teacher;    // distill
  bool oracle = false;                             // use the dataset's analytic model instead of a checkpoint
  std::optional<std::filesystem::path> samples;    // eval
  std::optional<std::filesystem::path> trace_a;    // eval: variance report baseline
  std::optional<std::filesystem::path> trace_b;
};

/// <root>/<run_name> with its fixed subdirectories.
class RunDir {
 public:
  explicit RunDir(std::filesystem::path path) : path_(std::move(path)) {}

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path checkpoints() const { return path_ / "checkpoints"; }
  std::filesystem::path traces() const { return path_ / "traces"; }
  std::filesystem::path samples() const { return path_ / "samples"; }
  std::filesystem::path grids() const { return path_ / "grids"; }
  std::filesystem::path reports() const { return path_ / "reports"; }
  std::filesystem::path manifest() const { return path_ / "manifest.json"; }

  void create() const;

 private:
  std::filesystem::path path_;
};

/// Output root: config value, then $EDM2D_OUTPUT_DIR, then "runs".
std::filesystem::path output_root(const RunConfig& config);
RunDir run_dir(const RunConfig& config);

/// FNV-1a of the canonical config JSON, as 16 hex digits.
std::string config_hash(const RunConfig& config);

/// Merges {command: {outputs, seed, config_hash}} into the run's manifest.
void record_manifest(const RunDir& dir, const std::string& command, const RunConfig& config,
                     const std::vector<std::filesystem::path>& outputs);

/// sigma_data from the config, or the RMS coordinate of a fixed data draw.
double resolve_sigma_data(const RunConfig& config);

/// Paths written by a command, relative to the run directory.
struct CommandOutput {
  std::vector<std::filesystem::path> files;
};

CommandOutput cmd_train_teacher(const RunConfig& config);
CommandOutput cmd_train_edsm(const RunConfig& config);
CommandOutput cmd_distill(const RunConfig& config, const CommandInputs& inputs);
CommandOutput cmd_sample(const RunConfig& config, const CommandInputs& inputs);
/// Throws NumericError when every particle is killed.
CommandOutput cmd_smc(const RunConfig& config, const CommandInputs& inputs);
CommandOutput cmd_diagnose(const RunConfig& config, const CommandInputs& inputs);
CommandOutput cmd_eval(const RunConfig& config, const CommandInputs& inputs);
CommandOutput cmd_make_data(const RunConfig& config);

/// Dispatches by subcommand name and records the manifest entry.
CommandOutput run_command(const std::string& name, const RunConfig& config, const CommandInputs& inputs);

/// Maps an exception to the documented exit code: 2 config, 3 numeric, 4 I/O, 1 otherwise.
int exit_code_for(const std::exception& error);

}  // namespace edm2d::app
