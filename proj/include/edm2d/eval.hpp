#pragma once

#include "edm2d/data.hpp"
#include "edm2d/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

namespace edm2d {

/// Regular 2D lattice with inclusive endpoints.
struct GridSpec {
  double x_min = -1.5;
  double x_max = 1.5;
  double y_min = -1.5;
  double y_max = 1.5;
  int resolution = 200;

  /// Throws ConfigError on non-finite or empty ranges or resolution < 2.
  void validate() const;
  double x_step() const { return (x_max - x_min) / (resolution - 1); }
  double y_step() const { return (y_max - y_min) / (resolution - 1); }
  /// resolution^2 points; row r = iy * resolution + ix is (x_ix, y_iy).
  Tensor points() const;
};

/// The default [-1.5, 1.5]^2 lattice scaled by the largest absolute coordinate of `samples`.
GridSpec grid_for(const Tensor& samples, int resolution = 200);

struct DensityGrid {
  GridSpec spec;
  Vector values;  // aligned with spec.points()
};

/// Batched function from (N x 2) points to N values.
using PointFn = std::function<Vector(const Tensor&)>;

DensityGrid evaluate_grid(const PointFn& fn, const GridSpec& spec);

/// Half the L1 distance between two log-weight vectors after normalizing each to
/// sum 1. Throws NumericError when either has zero total mass.
double tv_from_log_weights(const Vector& log_a, const Vector& log_b);

/// TV between exp(-energy) and exp(oracle) renormalized on the grid. The oracle
/// is a normalized log-density; throws ConfigError if its mass on the grid is below 0.99.
double grid_tv(const PointFn& energy, const PointFn& oracle_log_density, const GridSpec& spec);

/// Columns x1, x2, value with 17 significant digits.
std::string density_grid_csv(const DensityGrid& grid);
void export_density_grid(const DensityGrid& grid, const std::filesystem::path& path);

/// Mean over random unit directions of the 1D W1 between projections. The larger
/// set is subsampled without replacement to the smaller size.
double sliced_w1(const Tensor& a, const Tensor& b, int n_projections, std::uint64_t seed);

/// Lattice points within Mahalanobis distance `radius` of at least one component of
/// the oracle perturbed to `sigma`.
Tensor data_region_points(const AnalyticGMM& oracle, double sigma, const GridSpec& grid, double radius = 2.0);

/// sqrt(mean |s_model - s_oracle|^2) over data_region_points, error vectors taken whole.
double score_rmse(const DiffusionField& model, const AnalyticGMM& oracle, double sigma, const GridSpec& grid,
                  double radius = 2.0);

struct Moments {
  Vector mean;
  Eigen::MatrixXd cov;  // unbiased
};

/// Throws std::invalid_argument when there are fewer than two samples.
Moments moments(const Tensor& samples);

}  // namespace edm2d
