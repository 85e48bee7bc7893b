#pragma once

#include "edm2d/tensor.hpp"

namespace edm2d {

/// Anything that can act as a noise-conditional denoiser on batches of points:
/// learned teachers, energy models and the analytic mixture oracles.
class DiffusionField {
 public:
  virtual ~DiffusionField() = default;

  virtual int dim() const = 0;
  virtual Tensor denoise(const Tensor& x, double sigma) const = 0;
  /// One noise level per row. The default evaluates row by row.
  virtual Tensor denoise(const Tensor& x, const Vector& sigmas) const;

  /// Tweedie score (denoise(x) - x) / sigma^2 unless overridden.
  virtual Tensor score(const Tensor& x, double sigma) const;

  virtual bool has_energy() const { return false; }
  /// Unnormalized negative log-density per row. Throws ConfigError if the
  /// field carries no energy.
  virtual Vector energy(const Tensor& x, double sigma) const;
};

}  // namespace edm2d
