#pragma once

#include "edm2d/data.hpp"
#include "edm2d/eval.hpp"
#include "edm2d/fkm.hpp"
#include "edm2d/sampler.hpp"
#include "edm2d/schedule.hpp"
#include "edm2d/training.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace edm2d::app {

struct ModelSection {
  std::vector<int> hidden{128, 128, 128, 128};
  double omega0 = 6.0;
};

struct SamplerSection {
  Solver solver = Solver::HeunOde;
  double lambda = 0.0;
  Eigen::Index n_samples = 10000;
};

enum class GammaShape { Constant, Linear };

struct SmcSection {
  PotentialKind potential = PotentialKind::Unit;
  std::optional<GammaShape> gamma_shape;  // default: linear for compositions, else constant
  double gamma = 1.0;         // constant schedule value, or the terminal value of a linear one
  double gamma_start = 0.05;  // linear schedules only
  TemperatureVariant temperature_variant = TemperatureVariant::Ratio;
  CompositionVariant composition_variant = CompositionVariant::AnnealedRatio;
  bool kernel_correction = true;
  Box box;
  double delta = 0.0;
  std::optional<double> resample_floor_sigma;  // default: 0.1 sigma_data for compositions, else 0
  double energy_sigma_floor = 0.0;
  Eigen::Index n_particles = 1024;
  double tau = 0.5;
};

struct DiagnoseSection {
  std::vector<double> sigmas;  // empty: the positive levels of the sampling grid
  int n_points = 16;
  int n_probes = 64;
};

struct EvalSection {
  std::optional<GridSpec> grid;  // default: scaled to the data extent
  double sigma = 0.5;
  int n_projections = 128;
  Eigen::Index n_reference = 10000;
};

struct RunConfig {
  std::string run_name = "run";
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> output_dir;
  int workers = 1;

  DatasetSpec dataset;
  NoiseSchedule schedule;
  bool sigma_data_given = false;  // otherwise estimated from the data at startup
  ModelSection model;
  TrainConfig train;
  bool distill_on_score = false;  // distill with the score-space loss instead of the denoiser loss
  SamplerSection sampler;
  SmcSection smc;
  DiagnoseSection diagnose;
  EvalSection eval;
  Eigen::Index data_samples = 10000;

  /// Cross-field checks; throws ConfigError.
  void validate() const;

  StepPlan step_plan() const;
  PotentialSpec potential_spec() const;
  SmcConfig smc_config() const;
};

/// Parses a JSON document. Unknown keys, wrong types and invalid values throw ConfigError.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical JSON of the fully resolved configuration; stable across runs.
std::string config_to_json(const RunConfig& config);

}  // namespace edm2d::app
