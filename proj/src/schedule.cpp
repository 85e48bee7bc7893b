#include "edm2d/schedule.hpp"

#include "edm2d/errors.hpp"

#include <cmath>
#include <string>

namespace edm2d {

void NoiseSchedule::validate() const {
  if (!(sigma_min > 0.0)) throw ConfigError("schedule: sigma_min must be > 0");
  if (!(sigma_max > sigma_min)) throw ConfigError("schedule: sigma_max must exceed sigma_min");
  if (!(sigma_data > 0.0)) throw ConfigError("schedule: sigma_data must be > 0");
  if (n_steps < 2) throw ConfigError("schedule: n_steps must be >= 2");
  if (!(rho > 0.0)) throw ConfigError("schedule: rho must be > 0");
}

std::vector<double> sigma_grid(const NoiseSchedule& schedule) {
  schedule.validate();
  const double hi = std::pow(schedule.sigma_max, 1.0 / schedule.rho);
  const double lo = std::pow(schedule.sigma_min, 1.0 / schedule.rho);
  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(schedule.n_steps) + 1);
  for (int i = 0; i < schedule.n_steps; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(schedule.n_steps - 1);
    grid.push_back(std::pow(hi + frac * (lo - hi), schedule.rho));
  }
  // Pin the endpoints so pow round-off never leaks into them.
  grid.front() = schedule.sigma_max;
  grid.back() = schedule.sigma_min;
  grid.push_back(0.0);
  return grid;
}

Tensor perturb(const Tensor& x0, double sigma, const Tensor& eps) {
  if (sigma < 0.0) throw std::invalid_argument("perturb: sigma must be >= 0");
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) {
    throw std::invalid_argument("perturb: shape mismatch");
  }
  return x0 + sigma * eps;
}

Precond precond_at(double sigma, double sigma_data) {
  if (sigma < 0.0) throw std::invalid_argument("precond_at: sigma must be >= 0");
  const double s2 = sigma * sigma;
  const double d2 = sigma_data * sigma_data;
  const double norm = std::sqrt(s2 + d2);
  return Precond{
      .c_skip = d2 / (s2 + d2),
      .c_out = sigma * sigma_data / norm,
      .c_in = 1.0 / norm,
      .c_noise = std::log(sigma) / 4.0,
  };
}

Tensor score_from_denoiser(const Tensor& x, const Tensor& denoised, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("score_from_denoiser: sigma must be > 0");
  return (denoised - x) / (sigma * sigma);
}

double loss_weight(double sigma, double sigma_data) {
  const double sd = sigma * sigma_data;
  return (sigma * sigma + sigma_data * sigma_data) / (sd * sd);
}

double estimate_sigma_data(const Tensor& samples) {
  if (samples.size() == 0) throw ConfigError("estimate_sigma_data: empty sample set");
  return std::sqrt(samples.squaredNorm() / static_cast<double>(samples.size()));
}

}  // namespace edm2d
