#pragma once

#include "edm2d/tensor.hpp"

#include <vector>

namespace edm2d {

/// Variance-exploding noise schedule (alpha = 1) with warped sigma grid.
struct NoiseSchedule {
  double sigma_min = 0.002;
  double sigma_max = 10.0;
  double sigma_data = 1.0;
  int n_steps = 40;
  double rho = 7.0;

  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

/// Preconditioning coefficients at one noise level.
struct Precond {
  double c_skip;
  double c_out;
  double c_in;
  double c_noise;
};

/// n_steps decreasing levels from sigma_max to sigma_min, then a terminal 0.
std::vector<double> sigma_grid(const NoiseSchedule& schedule);

/// x0 + sigma * eps.
Tensor perturb(const Tensor& x0, double sigma, const Tensor& eps);

Precond precond_at(double sigma, double sigma_data);

/// Tweedie: (denoised - x) / sigma^2.
Tensor score_from_denoiser(const Tensor& x, const Tensor& denoised, double sigma);

/// Per-level weight (sigma^2 + sd^2) / (sigma * sd)^2 that equalizes the
/// denoising loss scale across noise levels.
double loss_weight(double sigma, double sigma_data);

/// Root-mean-square coordinate value of a sample batch.
double estimate_sigma_data(const Tensor& samples);

}  // namespace edm2d
