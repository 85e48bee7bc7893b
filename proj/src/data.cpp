#include "edm2d/data.hpp"

#include "edm2d/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace edm2d {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Per-component factorization of C + s^2 I.
struct Factor {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double log_norm;  // log w - 0.5 log det(2 pi C)
};

std::vector<Factor> factorize(const std::vector<GaussianComponent>& comps, int dim, double sigma) {
  std::vector<Factor> out;
  out.reserve(comps.size());
  for (const auto& c : comps) {
    Eigen::MatrixXd cov = c.cov;
    cov.diagonal().array() += sigma * sigma;
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double lw = c.weight > 0.0 ? std::log(c.weight) : -std::numeric_limits<double>::infinity();
    out.push_back(Factor{std::move(llt), lw - 0.5 * (dim * kLog2Pi + log_det)});
  }
  return out;
}

Eigen::Matrix2d rotation(double radians) {
  Eigen::Matrix2d r;
  r << std::cos(radians), -std::sin(radians), std::sin(radians), std::cos(radians);
  return r;
}

GaussianComponent component2(double weight, double mx, double my, double sx, double sy, double angle_deg = 0.0) {
  const Eigen::Matrix2d r = rotation(angle_deg * std::numbers::pi / 180.0);
  Eigen::Matrix2d d = Eigen::Matrix2d::Zero();
  d(0, 0) = sx * sx;
  d(1, 1) = sy * sy;
  Vector m(2);
  m << mx, my;
  return GaussianComponent{weight, m, r * d * r.transpose()};
}

void add_branch(std::vector<GaussianComponent>& out, const Eigen::Vector2d& origin, const Eigen::Vector2d& dir,
                double length, int level, int depth, double angle, double decay, int per_branch) {
  const double spacing = length / per_branch;
  const double along = 0.5 * spacing;
  // 8:1 variance anisotropy between the branch axis and its normal.
  const double across = along / std::sqrt(8.0);
  const Eigen::Vector2d normal(-dir.y(), dir.x());
  Eigen::Matrix2d basis;
  basis.col(0) = dir;
  basis.col(1) = normal;
  const Eigen::Matrix2d cov = basis * Eigen::Vector2d(along * along, across * across).asDiagonal() * basis.transpose();
  for (int k = 0; k < per_branch; ++k) {
    const Eigen::Vector2d center = origin + dir * (spacing * (k + 0.5));
    out.push_back(GaussianComponent{length / per_branch, Vector(center), Eigen::MatrixXd(cov)});
  }
  if (level < depth) {
    const Eigen::Vector2d tip = origin + dir * length;
    add_branch(out, tip, rotation(angle) * dir, length * decay, level + 1, depth, angle, decay, per_branch);
    add_branch(out, tip, rotation(-angle) * dir, length * decay, level + 1, depth, angle, decay, per_branch);
  }
}

}  // namespace

AnalyticGMM::AnalyticGMM(std::vector<GaussianComponent> components) : components_(std::move(components)) {
  if (components_.empty()) throw ConfigError("gmm: need at least one component");
  dim_ = static_cast<int>(components_.front().mean.size());
  double total = 0.0;
  for (const auto& c : components_) {
    if (c.mean.size() != dim_ || c.cov.rows() != dim_ || c.cov.cols() != dim_) {
      throw ConfigError("gmm: component dimension mismatch");
    }
    if (!(c.weight >= 0.0)) throw ConfigError("gmm: weights must be non-negative");
    if (!c.cov.isApprox(c.cov.transpose(), 1e-12)) throw ConfigError("gmm: covariance must be symmetric");
    if (Eigen::LLT<Eigen::MatrixXd>(c.cov).info() != Eigen::Success) {
      throw ConfigError("gmm: covariance must be positive definite");
    }
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ConfigError("gmm: weights must sum to 1");
}

AnalyticGMM AnalyticGMM::gaussian(Vector mean, Eigen::MatrixXd cov) {
  return AnalyticGMM({GaussianComponent{1.0, std::move(mean), std::move(cov)}});
}

Vector AnalyticGMM::perturbed_log_density(const Tensor& x, double sigma) const {
  if (sigma < 0.0) throw std::invalid_argument("gmm: sigma must be >= 0");
  if (x.cols() != dim_) throw std::invalid_argument("gmm: dimension mismatch");
  const auto factors = factorize(components_, dim_, sigma);
  Vector out(x.rows());
  std::vector<double> terms(components_.size());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < components_.size(); ++k) {
      const Vector d = x.row(r).transpose() - components_[k].mean;
      const Vector z = factors[k].llt.matrixL().solve(d);
      terms[k] = factors[k].log_norm - 0.5 * z.squaredNorm();
      top = std::max(top, terms[k]);
    }
    double acc = 0.0;
    for (const double t : terms) acc += std::exp(t - top);
    out[r] = top + std::log(acc);
  }
  return out;
}

Tensor AnalyticGMM::perturbed_score(const Tensor& x, double sigma) const {
  if (sigma < 0.0) throw std::invalid_argument("gmm: sigma must be >= 0");
  if (x.cols() != dim_) throw std::invalid_argument("gmm: dimension mismatch");
  const auto factors = factorize(components_, dim_, sigma);
  Tensor out(x.rows(), dim_);
  std::vector<double> terms(components_.size());
  std::vector<Vector> grads(components_.size());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < components_.size(); ++k) {
      const Vector d = x.row(r).transpose() - components_[k].mean;
      const Vector z = factors[k].llt.matrixL().solve(d);
      terms[k] = factors[k].log_norm - 0.5 * z.squaredNorm();
      grads[k] = -factors[k].llt.solve(d);
      top = std::max(top, terms[k]);
    }
    double total = 0.0;
    Vector acc = Vector::Zero(dim_);
    for (std::size_t k = 0; k < components_.size(); ++k) {
      const double w = std::exp(terms[k] - top);
      total += w;
      acc += w * grads[k];
    }
    out.row(r) = (acc / total).transpose();
  }
  return out;
}

Tensor AnalyticGMM::denoise(const Tensor& x, double sigma) const {
  return x + sigma * sigma * perturbed_score(x, sigma);
}

Vector AnalyticGMM::mean() const {
  Vector m = Vector::Zero(dim_);
  for (const auto& c : components_) m += c.weight * c.mean;
  return m;
}

Eigen::MatrixXd AnalyticGMM::covariance() const {
  const Vector m = mean();
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim_, dim_);
  for (const auto& c : components_) {
    const Vector d = c.mean - m;
    cov += c.weight * (c.cov + d * d.transpose());
  }
  return cov;
}

Tensor AnalyticGMM::sample(Eigen::Index n, Rng& rng) const {
  std::vector<double> weights;
  std::vector<Eigen::MatrixXd> chol;
  for (const auto& c : components_) {
    weights.push_back(c.weight);
    chol.push_back(Eigen::LLT<Eigen::MatrixXd>(c.cov).matrixL().toDenseMatrix());
  }
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::normal_distribution<double> normal;
  Tensor out(n, dim_);
  Vector z(dim_);
  for (Eigen::Index r = 0; r < n; ++r) {
    const std::size_t k = pick(rng);
    for (int j = 0; j < dim_; ++j) z[j] = normal(rng);
    out.row(r) = (components_[k].mean + chol[k] * z).transpose();
  }
  return out;
}

AnalyticGMM product_gmm(const AnalyticGMM& a, const AnalyticGMM& b) {
  if (a.dim() != b.dim()) throw ConfigError("product_gmm: dimension mismatch");
  const int dim = a.dim();
  std::vector<GaussianComponent> comps;
  std::vector<double> log_w;
  for (const auto& ca : a.components()) {
    for (const auto& cb : b.components()) {
      const Eigen::MatrixXd pa = ca.cov.inverse();
      const Eigen::MatrixXd pb = cb.cov.inverse();
      Eigen::MatrixXd cov = (pa + pb).inverse();
      cov = 0.5 * (cov + cov.transpose());
      const Vector mean = cov * (pa * ca.mean + pb * cb.mean);
      // Mass of the product: N(m_a; m_b, C_a + C_b).
      const Eigen::MatrixXd s = ca.cov + cb.cov;
      const Eigen::LLT<Eigen::MatrixXd> llt(s);
      const Vector z = llt.matrixL().solve(ca.mean - cb.mean);
      const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
      const double lz = -0.5 * (z.squaredNorm() + dim * kLog2Pi + log_det);
      log_w.push_back(std::log(ca.weight) + std::log(cb.weight) + lz);
      comps.push_back(GaussianComponent{0.0, mean, cov});
    }
  }
  const double top = *std::max_element(log_w.begin(), log_w.end());
  double total = 0.0;
  for (auto& lw : log_w) {
    lw = std::exp(lw - top);
    total += lw;
  }
  for (std::size_t k = 0; k < comps.size(); ++k) comps[k].weight = log_w[k] / total;
  // Renormalize once more so the sum is 1 to the last ulp the validator allows.
  double check = 0.0;
  for (const auto& c : comps) check += c.weight;
  for (auto& c : comps) c.weight /= check;
  return AnalyticGMM(std::move(comps));
}

AnalyticGMM fractal_tree_gmm(int depth, double branch_angle_deg, double length_decay, int components_per_branch) {
  if (depth < 1) throw ConfigError("fractal_tree: depth must be >= 1");
  if (components_per_branch < 1) throw ConfigError("fractal_tree: components_per_branch must be >= 1");
  if (!(length_decay > 0.0)) throw ConfigError("fractal_tree: length_decay must be > 0");
  std::vector<GaussianComponent> comps;
  add_branch(comps, Eigen::Vector2d(0.0, -1.0), Eigen::Vector2d(0.0, 1.0), 0.8, 1, depth,
             branch_angle_deg * std::numbers::pi / 180.0, length_decay, components_per_branch);
  double total = 0.0;
  for (const auto& c : comps) total += c.weight;
  for (auto& c : comps) c.weight /= total;
  double check = 0.0;
  for (const auto& c : comps) check += c.weight;
  for (auto& c : comps) c.weight /= check;
  return AnalyticGMM(std::move(comps));
}

AnalyticGMM default_three_component_gmm() {
  return AnalyticGMM({
      component2(0.3, -0.6, -0.35, 0.35, 0.2, 30.0),
      component2(0.3, 0.6, -0.35, 0.35, 0.2, -30.0),
      component2(0.4, 0.0, 0.7, 0.35, 0.2, 0.0),
  });
}

std::pair<AnalyticGMM, AnalyticGMM> composition_pair(PairLayout layout) {
  switch (layout) {
    case PairLayout::CrossingGaussians:
      return {AnalyticGMM({component2(1.0, 0.0, 0.5, 1.0, 0.2)}),
              AnalyticGMM({component2(1.0, 0.5, 0.0, 0.2, 1.0)})};
    case PairLayout::UnequalMixtures:
      // The tight modes overlap far more than the wide ones relative to their mass,
      // so the product puts ~86% of its weight on the tight pair.
      return {AnalyticGMM({component2(0.5, -1.0, 0.0, 0.15, 0.15), component2(0.5, 1.0, 0.0, 0.6, 0.6)}),
              AnalyticGMM({component2(0.5, -1.0, 0.3, 0.15, 0.15), component2(0.5, 1.0, -0.3, 0.6, 0.6)})};
  }
  throw ConfigError("unknown pair layout");
}

void DatasetSpec::validate() const {
  switch (kind) {
    case DatasetKind::Gaussian:
      if (components.size() > 1) throw ConfigError("dataset: gaussian takes at most one component");
      break;
    case DatasetKind::Gmm:
      break;
    case DatasetKind::Spiral:
      if (!(spiral_turns > 0.0)) throw ConfigError("dataset: spiral_turns must be > 0");
      if (!(spiral_r_max > spiral_r_min) || spiral_r_min < 0.0) throw ConfigError("dataset: invalid spiral radii");
      if (spiral_noise < 0.0) throw ConfigError("dataset: spiral_noise must be >= 0");
      break;
    case DatasetKind::FractalTree:
      if (tree_depth < 1 || tree_depth > 12) throw ConfigError("dataset: tree_depth must be in [1, 12]");
      if (components_per_branch < 1) throw ConfigError("dataset: components_per_branch must be >= 1");
      if (!(length_decay > 0.0 && length_decay <= 1.0)) throw ConfigError("dataset: length_decay must be in (0, 1]");
      break;
    case DatasetKind::CompositionPair:
      if (pair_member < 0 || pair_member > 2) throw ConfigError("dataset: pair_member must be 0, 1 or 2");
      break;
  }
}

DatasetKind parse_dataset_kind(const std::string& name) {
  if (name == "gaussian") return DatasetKind::Gaussian;
  if (name == "gmm") return DatasetKind::Gmm;
  if (name == "spiral") return DatasetKind::Spiral;
  if (name == "fractal_tree") return DatasetKind::FractalTree;
  if (name == "composition_pair") return DatasetKind::CompositionPair;
  throw ConfigError("unknown dataset kind: " + name);
}

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::Gaussian: return "gaussian";
    case DatasetKind::Gmm: return "gmm";
    case DatasetKind::Spiral: return "spiral";
    case DatasetKind::FractalTree: return "fractal_tree";
    case DatasetKind::CompositionPair: return "composition_pair";
  }
  return "?";
}

PairLayout parse_pair_layout(const std::string& name) {
  if (name == "crossing_gaussians") return PairLayout::CrossingGaussians;
  if (name == "unequal_mixtures") return PairLayout::UnequalMixtures;
  throw ConfigError("unknown pair layout: " + name);
}

std::string to_string(PairLayout layout) {
  return layout == PairLayout::CrossingGaussians ? "crossing_gaussians" : "unequal_mixtures";
}

std::optional<AnalyticGMM> analytic_oracle(const DatasetSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case DatasetKind::Gaussian:
      if (spec.components.empty()) return AnalyticGMM::gaussian(Vector::Zero(2), Eigen::MatrixXd::Identity(2, 2));
      return AnalyticGMM(spec.components);
    case DatasetKind::Gmm:
      if (spec.components.empty()) return default_three_component_gmm();
      return AnalyticGMM(spec.components);
    case DatasetKind::Spiral:
      return std::nullopt;
    case DatasetKind::FractalTree:
      return fractal_tree_gmm(spec.tree_depth, spec.branch_angle_deg, spec.length_decay, spec.components_per_branch);
    case DatasetKind::CompositionPair: {
      auto [a, b] = composition_pair(spec.pair_layout);
      if (spec.pair_member == 1) return a;
      if (spec.pair_member == 2) return b;
      return product_gmm(a, b);
    }
  }
  return std::nullopt;
}

Tensor sample(const DatasetSpec& spec, Eigen::Index n, Rng& rng) {
  if (n < 0) throw ConfigError("sample: n must be >= 0");
  if (spec.kind != DatasetKind::Spiral) return analytic_oracle(spec)->sample(n, rng);
  spec.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, spec.spiral_noise);
  Tensor out(n, 2);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double t = unit(rng);
    const double angle = 2.0 * std::numbers::pi * spec.spiral_turns * t;
    const double radius = spec.spiral_r_min + (spec.spiral_r_max - spec.spiral_r_min) * t;
    out(r, 0) = radius * std::cos(angle) + jitter(rng);
    out(r, 1) = radius * std::sin(angle) + jitter(rng);
  }
  return out;
}

}  // namespace edm2d
