#pragma once

#include "edm2d/field.hpp"
#include "edm2d/sampler.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace edm2d {

struct ParticleEnsemble {
  Tensor positions;     // K x d
  Vector log_weights;   // finite or -inf
  int step = 0;
  std::vector<Eigen::Index> ancestry;  // from the last resample; identity otherwise

  Eigen::Index size() const { return positions.rows(); }
};

/// (sum w)^2 / sum w^2 computed in log space. Throws NumericError if every weight is -inf.
double ess(const Vector& log_weights);

/// Weights normalized to sum 1, computed stably from log weights.
Vector normalized_weights(const Vector& log_weights);

/// Systematic scheme with one uniform: threshold (u + k) / n picks the first
/// index whose cumulative weight exceeds it. `n` defaults to weights.size().
/// Throws std::invalid_argument unless weights are non-negative and sum to 1 within 1e-9.
std::vector<Eigen::Index> systematic_resample(const Vector& weights, double u, Eigen::Index n = -1);

/// Resamples iff ESS < tau K and sigma > floor; weights then reset to zero in log space.
/// Returns whether it resampled.
bool maybe_resample(ParticleEnsemble& ensemble, double tau, double sigma, double floor, double u);

enum class PotentialKind { Unit, Temperature, CompositionProduct, BoundedRegion, BoundedDenoiser };
enum class TemperatureVariant { Simple, Ratio };
enum class CompositionVariant { Simple, AnnealedRatio };

PotentialKind parse_potential_kind(const std::string& name);
std::string to_string(PotentialKind kind);
TemperatureVariant parse_temperature_variant(const std::string& name);
std::string to_string(TemperatureVariant v);
CompositionVariant parse_composition_variant(const std::string& name);
std::string to_string(CompositionVariant v);

/// Axis-aligned box; infinite bounds leave a dimension free.
struct Box {
  std::vector<double> lower;
  std::vector<double> upper;

  bool contains(const Tensor& x, Eigen::Index row) const;
};

struct PotentialSpec {
  PotentialKind kind = PotentialKind::Unit;
  std::vector<double> gamma;  // one per sigma level, including the terminal 0
  TemperatureVariant temperature_variant = TemperatureVariant::Ratio;
  CompositionVariant composition_variant = CompositionVariant::AnnealedRatio;
  // Adds log L(x_prev | x) - log M(x | x_prev) to annealed_ratio weights, with L the
  // forward noising kernel and M the Euler proposal.
  bool kernel_correction = true;
  Box box;
  double delta = 0.0;
  double resample_floor_sigma = 0.0;
  // Energies and denoisers are evaluated here instead of at sigma = 0; 0 picks
  // the smallest positive level of the grid.
  double energy_sigma_floor = 0.0;

  /// Throws ConfigError when the spec does not fit a grid of `n_levels` levels in `dim` dimensions.
  void validate(std::size_t n_levels, int dim) const;
};

std::vector<double> constant_gamma_schedule(std::size_t n_levels, double gamma);
/// Linear from `start` at the first level to `end` at the terminal level.
std::vector<double> linear_gamma_schedule(std::size_t n_levels, double start, double end = 1.0);

/// Inputs to one potential evaluation. Pointers may be null where unused.
struct PotentialContext {
  int step = 0;
  const Tensor* x = nullptr;
  const Tensor* x_prev = nullptr;  // absent at step 0
  double sigma = 0.0;
  double sigma_prev = 0.0;
  std::vector<const DiffusionField*> models;
  const Tensor* denoised = nullptr;             // bounded_denoiser; computed from models[0] if absent
  const TransitionRecord* transition = nullptr;  // kernel correction
  const Vector* prev_energy = nullptr;          // cached summed energy at (x_prev, sigma_prev)
};

/// Per-row log G_i.
Vector potential_log_G(const PotentialSpec& spec, const PotentialContext& ctx);

/// Sum of the models' scores; throws ConfigError on mismatched dimensions or no models.
ScoreFn composed_score(std::vector<const DiffusionField*> models);

struct SmcConfig {
  std::vector<double> sigmas;
  Eigen::Index n_particles = 1024;
  double tau = 0.5;
  std::uint64_t seed = 0;
  int dim = 2;

  void validate() const;
};

struct SmcStepRow {
  int step;
  double sigma;
  double ess;  // before resampling
  bool resampled;
  double log_z_increment;
  double alive_fraction;
};

struct SmcResult {
  Tensor positions;
  Vector log_weights;
  std::vector<SmcStepRow> report;
  double log_z = 0.0;
  bool collapsed = false;  // every weight hit -inf; positions hold the last live ensemble
};

/// Prior draws weighted by G_0, then per level: Euler (lambda = 1) proposal with the
/// `proposal` score, reweighting by G_i, and adaptive systematic resampling. The
/// terminal ensemble is resampled once more unless its weights are already uniform.
SmcResult smc_run(const ScoreFn& proposal, const std::vector<const DiffusionField*>& models,
                  const PotentialSpec& spec, const SmcConfig& config);

std::string smc_report_csv(const std::vector<SmcStepRow>& rows);

}  // namespace edm2d
