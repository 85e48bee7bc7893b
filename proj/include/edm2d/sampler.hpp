#pragma once

#include "edm2d/field.hpp"
#include "edm2d/rng.hpp"
#include "edm2d/schedule.hpp"

#include <functional>
#include <string>
#include <vector>

namespace edm2d {

/// Score of the noised distribution at one level, applied to a batch.
using ScoreFn = std::function<Tensor(const Tensor& x, double sigma)>;

ScoreFn score_of(const DiffusionField& field);

enum class Solver { EulerSde, HeunOde };

Solver parse_solver(const std::string& name);
std::string to_string(Solver solver);

struct StepPlan {
  std::vector<double> sigmas;  // decreasing, ending at 0
  double lambda = 0.0;
  Solver solver = Solver::HeunOde;

  /// Throws ConfigError on a bad grid, negative lambda, or Heun with lambda != 0.
  void validate() const;
};

/// Gaussian transition N(mean, stdev^2 I) of one Euler step.
struct TransitionRecord {
  Tensor mean;
  double stdev = 0.0;
};

struct EulerResult {
  Tensor x_next;
  TransitionRecord record;
};

/// One step of the lambda-family reverse SDE in sigma time, Delta = s_i^2 - s_next^2:
/// mean = x + Delta (1 + lambda^2) / 2 * score(x, s_i), x_next = mean + lambda sqrt(Delta) noise.
EulerResult euler_step(const ScoreFn& score, const Tensor& x, double sigma, double sigma_next, double lambda,
                       const Tensor& noise);

/// Second-order probability-flow step; the corrector is skipped when sigma_next = 0.
Tensor heun_step(const ScoreFn& score, const Tensor& x, double sigma, double sigma_next);

/// Per-row log N(x_next; mean, stdev^2 I). Throws std::invalid_argument when stdev = 0.
Vector transition_log_density(const TransitionRecord& record, const Tensor& x_next);

/// n draws from N(0, sigma_max^2 I).
Tensor sample_prior(const NoiseSchedule& schedule, Eigen::Index n, int dim, Rng& rng);

/// Prior draws from the counter-based Prior stream (step 0); row k is particle k.
Tensor sample_prior(double sigma_max, Eigen::Index n, int dim, std::uint64_t seed);

/// Proposal noise for step `step`, row k keyed by particle k.
Tensor proposal_noise(Eigen::Index n, int dim, std::uint64_t step, std::uint64_t seed);

/// Runs the plan from prior draws to sigma = 0 with counter-based streams, so
/// particle k sees the same noise as particle k of an SMC run with the same seed.
Tensor generate(const ScoreFn& score, const StepPlan& plan, Eigen::Index n, int dim, std::uint64_t seed);

/// Runs the plan from a given start; `noise_seed` feeds the Euler noise.
Tensor integrate(const ScoreFn& score, const StepPlan& plan, Tensor x, std::uint64_t noise_seed);

}  // namespace edm2d
