#pragma once

#include "edm2d/field.hpp"
#include "edm2d/rng.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace edm2d {

struct GaussianComponent {
  double weight;
  Vector mean;
  Eigen::MatrixXd cov;
};

/// Gaussian mixture with closed-form densities and scores under Gaussian
/// perturbation: convolving with N(0, s^2 I) adds s^2 I to every covariance.
class AnalyticGMM final : public DiffusionField {
 public:
  /// Validates weights (non-negative, sum to 1 within 1e-12) and SPD covariances.
  explicit AnalyticGMM(std::vector<GaussianComponent> components);

  static AnalyticGMM gaussian(Vector mean, Eigen::MatrixXd cov);

  int dim() const override { return dim_; }
  std::size_t size() const { return components_.size(); }
  const std::vector<GaussianComponent>& components() const { return components_; }

  Vector perturbed_log_density(const Tensor& x, double sigma) const;
  Tensor perturbed_score(const Tensor& x, double sigma) const;
  Vector perturbed_energy(const Tensor& x, double sigma) const { return -perturbed_log_density(x, sigma); }

  using DiffusionField::denoise;
  Tensor denoise(const Tensor& x, double sigma) const override;
  Tensor score(const Tensor& x, double sigma) const override { return perturbed_score(x, sigma); }
  bool has_energy() const override { return true; }
  Vector energy(const Tensor& x, double sigma) const override { return perturbed_energy(x, sigma); }

  /// Mixture mean and covariance.
  Vector mean() const;
  Eigen::MatrixXd covariance() const;

  Tensor sample(Eigen::Index n, Rng& rng) const;

 private:
  int dim_;
  std::vector<GaussianComponent> components_;
};

/// Exact normalized product of two mixtures: one component per pair.
AnalyticGMM product_gmm(const AnalyticGMM& a, const AnalyticGMM& b);

/// Recursive tree of elongated Gaussians: a vertical trunk and two children
/// per branch rotated by +-branch_angle and shrunk by length_decay.
AnalyticGMM fractal_tree_gmm(int depth, double branch_angle_deg, double length_decay, int components_per_branch);

enum class DatasetKind { Gaussian, Gmm, Spiral, FractalTree, CompositionPair };

enum class PairLayout {
  CrossingGaussians,  // horizontal and vertical elongated Gaussians
  UnequalMixtures,    // two-component mixtures, each with one tight and one wide mode
};

struct DatasetSpec {
  DatasetKind kind = DatasetKind::Gmm;
  std::vector<GaussianComponent> components;  // gaussian / gmm; empty picks the default layout

  int tree_depth = 4;
  double branch_angle_deg = 25.0;
  double length_decay = 0.7;
  int components_per_branch = 3;

  double spiral_turns = 1.5;
  double spiral_r_min = 0.2;
  double spiral_r_max = 1.0;
  double spiral_noise = 0.05;

  PairLayout pair_layout = PairLayout::CrossingGaussians;
  int pair_member = 0;  // 1 or 2 selects a factor; 0 is the product

  void validate() const;
};

DatasetKind parse_dataset_kind(const std::string& name);
std::string to_string(DatasetKind kind);
PairLayout parse_pair_layout(const std::string& name);
std::string to_string(PairLayout layout);

/// Three anisotropic components arranged in a triangle.
AnalyticGMM default_three_component_gmm();

std::pair<AnalyticGMM, AnalyticGMM> composition_pair(PairLayout layout);

/// Exact oracle behind a dataset; empty for spirals.
std::optional<AnalyticGMM> analytic_oracle(const DatasetSpec& spec);

/// n i.i.d. draws; spirals add isotropic jitter, other kinds sample their oracle.
Tensor sample(const DatasetSpec& spec, Eigen::Index n, Rng& rng);

}  // namespace edm2d
