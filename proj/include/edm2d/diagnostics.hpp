#pragma once

#include "edm2d/graph.hpp"
#include "edm2d/model.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace edm2d {

/// Hutchinson estimate of the Jacobian asymmetry |J - J^T|_F^2 at one point.
struct AsymmetryEstimate {
  double raw = 0.0;
  double raw_stderr = 0.0;
  double normalized = 0.0;  // raw / mean |v^T J|^2; NaN when that mean is 0
  double normalized_stderr = 0.0;
  int n_probes = 0;
};

/// Row-wise vector field on a tape together with the parameters it reads.
struct ProbedField {
  grad::Builder field;
  std::span<const double> params;
};

/// Probe v ~ N(0, I) from the counter-based Probe stream keyed by (seed, probe_step):
/// raw is the probe mean of |v^T J - J v|^2, with v^T J from reverse mode and J v from jvp.
/// `x` is a single point (1 x d). Throws NumericError on non-finite field values.
AsymmetryEstimate hutchinson_asymmetry(const ProbedField& field, const Tensor& x, int n_probes, std::uint64_t seed,
                                       std::uint64_t probe_step = 0);

/// Builds the score field of a model at a given noise level.
using FieldAtSigma = std::function<ProbedField(double sigma)>;

FieldAtSigma score_field(const TeacherModel& model);
FieldAtSigma score_field(const EnergyModel& model);

struct AsymmetryRow {
  double sigma;
  double raw_mean;
  double raw_stderr;
  double norm_mean;
  double norm_stderr;
  int n_points;
  int n_probes;
};

/// Evaluation points at one level: rows of `data` plus sigma * N(0, I) noise, cycling
/// through `data` in order. Deterministic in (seed, sigma_index).
Tensor perturbed_points(const Tensor& data, double sigma, Eigen::Index n, std::uint64_t seed,
                        std::uint64_t sigma_index);

/// Per level, averages the per-point estimates over `points(level index)`. Standard
/// errors combine the per-point probe errors, so they measure Monte Carlo noise only.
std::vector<AsymmetryRow> asymmetry_sweep(const FieldAtSigma& field, const std::vector<double>& sigmas,
                                          const std::function<Tensor(std::size_t)>& points, int n_probes,
                                          std::uint64_t seed);

std::string asymmetry_csv(const std::vector<AsymmetryRow>& rows);

}  // namespace edm2d
