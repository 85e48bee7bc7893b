#include "edm2d/eval.hpp"

#include "edm2d/errors.hpp"
#include "edm2d/io.hpp"
#include "edm2d/rng.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace edm2d {

namespace {

double log_sum_exp(const Vector& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

std::vector<double> sorted_projection(const Tensor& x, const Vector& dir, const std::vector<Eigen::Index>& rows) {
  std::vector<double> p(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) p[k] = x.row(rows[k]).dot(dir);
  std::sort(p.begin(), p.end());
  return p;
}

}  // namespace

void GridSpec::validate() const {
  for (double v : {x_min, x_max, y_min, y_max}) {
    if (!std::isfinite(v)) throw ConfigError("grid: ranges must be finite");
  }
  if (!(x_min < x_max) || !(y_min < y_max)) throw ConfigError("grid: empty range");
  if (resolution < 2) throw ConfigError("grid: resolution must be >= 2");
}

Tensor GridSpec::points() const {
  validate();
  const Eigen::Index n = resolution;
  Tensor p(n * n, 2);
  for (Eigen::Index iy = 0; iy < n; ++iy) {
    const double y = iy == n - 1 ? y_max : y_min + static_cast<double>(iy) * y_step();
    for (Eigen::Index ix = 0; ix < n; ++ix) {
      p(iy * n + ix, 0) = ix == n - 1 ? x_max : x_min + static_cast<double>(ix) * x_step();
      p(iy * n + ix, 1) = y;
    }
  }
  return p;
}

GridSpec grid_for(const Tensor& samples, int resolution) {
  const double extent = samples.size() ? samples.cwiseAbs().maxCoeff() : 1.0;
  if (!(extent > 0.0) || !std::isfinite(extent)) throw ConfigError("grid_for: degenerate samples");
  GridSpec g;
  g.x_min = g.y_min = -1.5 * extent;
  g.x_max = g.y_max = 1.5 * extent;
  g.resolution = resolution;
  g.validate();
  return g;
}

DensityGrid evaluate_grid(const PointFn& fn, const GridSpec& spec) {
  DensityGrid g{spec, fn(spec.points())};
  if (g.values.size() != static_cast<Eigen::Index>(spec.resolution) * spec.resolution) {
    throw std::invalid_argument("evaluate_grid: function returned the wrong number of values");
  }
  return g;
}

double tv_from_log_weights(const Vector& log_a, const Vector& log_b) {
  if (log_a.size() != log_b.size()) throw std::invalid_argument("tv: size mismatch");
  const double za = log_sum_exp(log_a);
  const double zb = log_sum_exp(log_b);
  if (!std::isfinite(za) || !std::isfinite(zb)) throw NumericError("tv: zero or non-finite total mass");
  const double tv = 0.5 * ((log_a.array() - za).exp() - (log_b.array() - zb).exp()).abs().sum();
  return std::clamp(tv, 0.0, 1.0);
}

double grid_tv(const PointFn& energy, const PointFn& oracle_log_density, const GridSpec& spec) {
  const Tensor pts = spec.points();
  const Vector lp = oracle_log_density(pts);
  const double mass = std::exp(log_sum_exp(lp)) * spec.x_step() * spec.y_step();
  if (mass < 0.99) throw ConfigError("grid_tv: grid holds less than 99% of the oracle mass");
  return tv_from_log_weights(-energy(pts), lp);
}

std::string density_grid_csv(const DensityGrid& grid) {
  const Tensor pts = grid.spec.points();
  io::CsvWriter csv({"x1", "x2", "value"});
  for (Eigen::Index r = 0; r < pts.rows(); ++r) {
    csv.cell(pts(r, 0)).cell(pts(r, 1)).cell(grid.values[r]);
    csv.end_row();
  }
  return csv.str();
}

void export_density_grid(const DensityGrid& grid, const std::filesystem::path& path) {
  io::write_atomic(path, density_grid_csv(grid));
}

double sliced_w1(const Tensor& a, const Tensor& b, int n_projections, std::uint64_t seed) {
  if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("sliced_w1: empty sample set");
  if (a.cols() != b.cols()) throw std::invalid_argument("sliced_w1: dimension mismatch");
  if (n_projections < 1) throw std::invalid_argument("sliced_w1: need at least one projection");

  Rng rng(derive_seed(seed, 0x5713));
  const Eigen::Index n = std::min(a.rows(), b.rows());
  const auto pick = [&](Eigen::Index total) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(total));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    if (total > n) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(n));
    }
    return idx;
  };
  const auto ia = pick(a.rows());
  const auto ib = pick(b.rows());

  std::normal_distribution<double> normal(0.0, 1.0);
  double total = 0.0;
  for (int p = 0; p < n_projections; ++p) {
    Vector dir(a.cols());
    do {
      for (Eigen::Index j = 0; j < dir.size(); ++j) dir[j] = normal(rng);
    } while (dir.norm() == 0.0);
    dir.normalize();
    const auto pa = sorted_projection(a, dir, ia);
    const auto pb = sorted_projection(b, dir, ib);
    double w = 0.0;
    for (std::size_t k = 0; k < pa.size(); ++k) w += std::abs(pa[k] - pb[k]);
    total += w / static_cast<double>(pa.size());
  }
  return total / n_projections;
}

Tensor data_region_points(const AnalyticGMM& oracle, double sigma, const GridSpec& grid, double radius) {
  if (oracle.dim() != 2) throw std::invalid_argument("data_region_points: oracle must be 2D");
  const Tensor pts = grid.points();
  std::vector<Eigen::Index> keep;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> chol;
  for (const auto& c : oracle.components()) {
    chol.emplace_back(c.cov + sigma * sigma * Eigen::MatrixXd::Identity(2, 2));
  }
  for (Eigen::Index r = 0; r < pts.rows(); ++r) {
    for (std::size_t k = 0; k < chol.size(); ++k) {
      const Vector d = pts.row(r).transpose() - oracle.components()[k].mean;
      if (chol[k].matrixL().solve(d).squaredNorm() <= radius * radius) {
        keep.push_back(r);
        break;
      }
    }
  }
  Tensor out(static_cast<Eigen::Index>(keep.size()), 2);
  for (std::size_t i = 0; i < keep.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = pts.row(keep[i]);
  return out;
}

double score_rmse(const DiffusionField& model, const AnalyticGMM& oracle, double sigma, const GridSpec& grid,
                  double radius) {
  const Tensor x = data_region_points(oracle, sigma, grid, radius);
  if (x.rows() == 0) throw ConfigError("score_rmse: no grid points inside the data region");
  const Tensor diff = model.score(x, sigma) - oracle.perturbed_score(x, sigma);
  return std::sqrt(diff.squaredNorm() / static_cast<double>(x.rows()));
}

Moments moments(const Tensor& samples) {
  if (samples.rows() < 2) throw std::invalid_argument("moments: need at least two samples");
  Moments m;
  m.mean = samples.colwise().mean().transpose();
  const Tensor c = samples.rowwise() - m.mean.transpose();
  m.cov = c.transpose() * c / static_cast<double>(samples.rows() - 1);
  return m;
}

}  // namespace edm2d
