#include "edm2d/data.hpp"
#include "edm2d/errors.hpp"
#include "edm2d/fkm.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

namespace edm2d {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out[k++] = x;
  return out;
}

std::vector<int> counts(const std::vector<Eigen::Index>& idx, Eigen::Index m) {
  std::vector<int> c(static_cast<std::size_t>(m), 0);
  for (auto i : idx) ++c[static_cast<std::size_t>(i)];
  return c;
}

AnalyticGMM standard_normal_1d() { return AnalyticGMM::gaussian(Vector::Zero(1), Eigen::MatrixXd::Identity(1, 1)); }

double variance(const Tensor& x) {
  const double m = x.mean();
  return (x.array() - m).square().sum() / double(x.size() - 1);
}

TEST(Ess, Examples) {
  EXPECT_EQ(ess(Vector::Zero(64)), 64.0);
  EXPECT_EQ(ess(Vector::Constant(64, -3.7)), 64.0);
  EXPECT_DOUBLE_EQ(ess(vec({0.0, -kInf, -kInf})), 1.0);
  EXPECT_NEAR(ess(vec({std::log(1.0 / 3.0), std::log(2.0 / 3.0)})), 1.8, 1e-14);
  // Shift invariance in log space, including huge offsets.
  EXPECT_NEAR(ess(vec({1000.0 + std::log(1.0 / 3.0), 1000.0 + std::log(2.0 / 3.0)})), 1.8, 1e-12);
  EXPECT_THROW(ess(vec({-kInf, -kInf})), NumericError);
}

TEST(SystematicResample, Examples) {
  const auto uniform = systematic_resample(Vector::Constant(5, 0.2), 0.73);
  EXPECT_EQ(counts(uniform, 5), (std::vector<int>{1, 1, 1, 1, 1}));
  EXPECT_EQ(counts(systematic_resample(vec({1, 0, 0}), 0.99), 3), (std::vector<int>{3, 0, 0}));
  EXPECT_EQ(counts(systematic_resample(vec({0.5, 0.25, 0.25}), 0.1, 4), 3), (std::vector<int>{2, 1, 1}));
  // Trailing zero weights are never selected, even with rounding in the cumulative sum.
  EXPECT_EQ(counts(systematic_resample(vec({0.1, 0.2, 0.7, 0.0}), 0.999), 4)[3], 0);
}

TEST(SystematicResample, RejectsBadInput) {
  EXPECT_THROW(systematic_resample(vec({0.5, 0.6}), 0.1), std::invalid_argument);
  EXPECT_THROW(systematic_resample(vec({1.5, -0.5}), 0.1), std::invalid_argument);
  EXPECT_THROW(systematic_resample(vec({0.5, 0.5}), 1.0), std::invalid_argument);
}

TEST(SystematicResample, CountsBracketExpectation) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> size(2, 50);
  for (int trial = 0; trial < 1000; ++trial) {
    const int m = size(rng);
    Vector w(m);
    for (int j = 0; j < m; ++j) w[j] = std::pow(unif(rng), 3.0);
    w /= w.sum();
    const Eigen::Index k = 1 + trial % 97;
    const auto c = counts(systematic_resample(w, unif(rng), k), m);
    for (int j = 0; j < m; ++j) {
      const double kw = double(k) * w[j];
      EXPECT_GE(c[j], std::floor(kw - 1e-9)) << "trial " << trial;
      EXPECT_LE(c[j], std::ceil(kw + 1e-9)) << "trial " << trial;
    }
  }
}

TEST(SystematicResample, UnbiasedOverUniformGrid) {
  const Vector w = vec({0.05, 0.3, 0.15, 0.5});
  const Eigen::Index k = 7;
  const int grid = 10000;
  std::vector<double> mean(4, 0.0);
  for (int g = 0; g < grid; ++g) {
    const auto c = counts(systematic_resample(w, (g + 0.5) / grid, k), 4);
    for (int j = 0; j < 4; ++j) mean[j] += double(c[j]) / grid;
  }
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(mean[j], double(k) * w[j], 1e-3);
}

TEST(MaybeResample, Rules) {
  ParticleEnsemble e;
  e.positions = Tensor::Zero(4, 2);
  e.positions.col(0) << 0, 1, 2, 3;
  e.log_weights = Vector::Zero(4);
  EXPECT_FALSE(maybe_resample(e, 1.0, 5.0, 0.0, 0.5));

  e.log_weights = vec({0.0, -1.0, -2.0, -3.0});
  EXPECT_FALSE(maybe_resample(e, 1.0, 0.05, 0.1, 0.5));  // below the floor

  e.log_weights = vec({0.0, -kInf, -kInf, -kInf});
  EXPECT_FALSE(maybe_resample(e, 0.5, 0.1, 0.1, 0.5));  // at the floor, ESS = 1
  EXPECT_TRUE(maybe_resample(e, 0.5, 0.2, 0.1, 0.5));
  EXPECT_EQ(e.log_weights, Vector::Zero(4));
  EXPECT_EQ(e.ancestry, (std::vector<Eigen::Index>{0, 0, 0, 0}));
  EXPECT_EQ(e.positions.col(0), Vector::Zero(4));
  EXPECT_EQ(ess(e.log_weights), 4.0);

  e.log_weights = vec({0.0, -0.1, 0.0, 0.0});
  EXPECT_TRUE(maybe_resample(e, 1.0, 1.0, 0.0, 0.5));
  EXPECT_THROW(maybe_resample(e, 0.0, 1.0, 0.0, 0.5), ConfigError);
}

TEST(Potential, UnitTemperatureAndRegion) {
  const auto gauss = standard_normal_1d();
  Tensor x(2, 1);
  x << 0.3, -2.0;
  PotentialContext ctx;
  ctx.x = &x;
  ctx.sigma = 0.5;
  ctx.models = {&gauss};

  PotentialSpec unit;
  EXPECT_EQ(potential_log_G(unit, ctx), Vector::Zero(2));

  PotentialSpec temp;
  temp.kind = PotentialKind::Temperature;
  temp.gamma = {0.0, 0.0};
  EXPECT_EQ(potential_log_G(temp, ctx), Vector::Zero(2));
  temp.gamma = {2.0, 2.0};
  temp.temperature_variant = TemperatureVariant::Simple;
  EXPECT_LT((potential_log_G(temp, ctx) + 2.0 * gauss.energy(x, 0.5)).norm(), 1e-14);

  PotentialSpec region;
  region.kind = PotentialKind::BoundedRegion;
  region.box = {{0.25, -kInf}, {1.0, kInf}};
  Tensor pts(3, 2);
  pts << 0.0, 0.0, 0.5, 100.0, 1.0, -3.0;
  ctx.x = &pts;
  const Vector lg = potential_log_G(region, ctx);
  EXPECT_EQ(lg[0], -kInf);
  EXPECT_EQ(lg[1], 0.0);
  EXPECT_EQ(lg[2], 0.0);
}

TEST(Potential, BoundedDenoiser) {
  PotentialSpec spec;
  spec.kind = PotentialKind::BoundedDenoiser;
  spec.delta = 0.1;
  Tensor x = Tensor::Zero(3, 2);
  Tensor d(3, 2);
  d << 0.0, 0.9, 0.95, 0.0, -0.5, -0.5;
  PotentialContext ctx;
  ctx.x = &x;
  ctx.denoised = &d;
  const Vector lg = potential_log_G(spec, ctx);
  EXPECT_EQ(lg[0], 0.0);
  EXPECT_EQ(lg[1], -kInf);
  EXPECT_EQ(lg[2], 0.0);
}

TEST(Potential, RatioFormsTelescope) {
  // Along any path the ratio weights multiply to exp(-gamma_N E(x_N, sigma_N)).
  const auto gauss = standard_normal_1d();
  const std::vector<double> sig = {3.0, 1.0, 0.5, 0.1};
  PotentialSpec spec;
  spec.kind = PotentialKind::Temperature;
  spec.gamma = {0.2, 0.4, 0.7, 1.5};
  std::vector<Tensor> path;
  for (double v : {2.0, -1.0, 0.4, 0.3}) path.push_back(Tensor::Constant(1, 1, v));
  double total = 0.0;
  for (int i = 0; i < 4; ++i) {
    PotentialContext ctx;
    ctx.step = i;
    ctx.x = &path[i];
    ctx.sigma = sig[i];
    if (i > 0) {
      ctx.x_prev = &path[i - 1];
      ctx.sigma_prev = sig[i - 1];
    }
    ctx.models = {&gauss};
    total += potential_log_G(spec, ctx)[0];
  }
  EXPECT_NEAR(total, -1.5 * gauss.energy(path[3], 0.1)[0], 1e-13);
}

TEST(Potential, KernelCorrectionMatchesHandFormula) {
  const auto gauss = AnalyticGMM::gaussian(Vector::Zero(2), Eigen::MatrixXd::Identity(2, 2));
  Tensor prev(1, 2), x(1, 2), mean(1, 2);
  prev << 1.0, -0.5;
  x << 0.7, -0.1;
  mean << 0.6, 0.0;
  const double s0 = 2.0, s1 = 1.0;
  const TransitionRecord rec{mean, std::sqrt(3.0)};
  PotentialSpec spec;
  spec.kind = PotentialKind::CompositionProduct;
  spec.gamma = {0.0, 0.0};
  PotentialContext ctx;
  ctx.step = 1;
  ctx.x = &x;
  ctx.x_prev = &prev;
  ctx.sigma = s1;
  ctx.sigma_prev = s0;
  ctx.transition = &rec;
  ctx.models = {&gauss, &gauss};
  // Both kernels are Gaussian with variance 3, so the constants cancel.
  const double expected = -(prev - x).squaredNorm() / 6.0 + (x - mean).squaredNorm() / 6.0;
  EXPECT_NEAR(potential_log_G(spec, ctx)[0], expected, 1e-14);
  spec.kernel_correction = false;
  EXPECT_EQ(potential_log_G(spec, ctx)[0], 0.0);
  spec.kernel_correction = true;
  ctx.transition = nullptr;
  EXPECT_THROW(potential_log_G(spec, ctx), std::invalid_argument);
}

TEST(Potential, Validation) {
  PotentialSpec spec;
  spec.kind = PotentialKind::Temperature;
  spec.gamma = {1.0, 1.0};
  EXPECT_THROW(spec.validate(3, 1), ConfigError);
  EXPECT_NO_THROW(spec.validate(2, 1));
  spec.gamma = {1.0, NAN};
  EXPECT_THROW(spec.validate(2, 1), ConfigError);
  spec.kind = PotentialKind::BoundedRegion;
  spec.box = {{0.0, 1.0}, {1.0, 1.0}};
  EXPECT_THROW(spec.validate(2, 2), ConfigError);
  spec.kind = PotentialKind::BoundedDenoiser;
  spec.delta = 1.0;
  EXPECT_THROW(spec.validate(2, 2), ConfigError);
  EXPECT_EQ(parse_potential_kind(to_string(PotentialKind::CompositionProduct)), PotentialKind::CompositionProduct);
  EXPECT_EQ(parse_composition_variant("annealed_ratio"), CompositionVariant::AnnealedRatio);
  EXPECT_EQ(parse_temperature_variant("ratio"), TemperatureVariant::Ratio);
  EXPECT_THROW(parse_potential_kind("twisted"), ConfigError);
}

TEST(GammaSchedule, LinearEndsAtOne) {
  const auto g = linear_gamma_schedule(41, 0.05);
  ASSERT_EQ(g.size(), 41u);
  EXPECT_EQ(g.front(), 0.05);
  EXPECT_EQ(g.back(), 1.0);
  EXPECT_NEAR(g[20], 0.525, 1e-15);
}

TEST(ComposedScore, Examples) {
  const double a = 0.7, b = 1.8, s = 0.6;
  const auto ga = AnalyticGMM::gaussian(Vector::Zero(2), a * a * Eigen::MatrixXd::Identity(2, 2));
  const auto gb = AnalyticGMM::gaussian(Vector::Zero(2), b * b * Eigen::MatrixXd::Identity(2, 2));
  Tensor x(2, 2);
  x << 0.3, -1.0, 2.0, 0.5;
  const Tensor expected = -x * (1.0 / (a * a + s * s) + 1.0 / (b * b + s * s));
  EXPECT_LT((composed_score({&ga, &gb})(x, s) - expected).norm(), 1e-13);
  EXPECT_LT((composed_score({&ga, &ga})(x, s) - 2.0 * ga.score(x, s)).norm(), 1e-14);
  EXPECT_THROW(composed_score({}), ConfigError);
  const auto one_d = standard_normal_1d();
  EXPECT_THROW(composed_score({&ga, &one_d}), ConfigError);
}

TEST(SmcRun, UnitPotentialsReproducePlainSampler) {
  const auto gmm = default_three_component_gmm();
  SmcConfig cfg;
  cfg.sigmas = sigma_grid(NoiseSchedule{});
  cfg.n_particles = 256;
  cfg.seed = 99;
  const auto res = smc_run(score_of(gmm), {&gmm}, PotentialSpec{}, cfg);
  const StepPlan plan{cfg.sigmas, 1.0, Solver::EulerSde};
  const Tensor plain = generate(score_of(gmm), plan, 256, 2, 99);
  EXPECT_FALSE(res.collapsed);
  EXPECT_TRUE(res.positions == plain);
  ASSERT_EQ(res.report.size(), cfg.sigmas.size());
  for (const auto& r : res.report) {
    EXPECT_EQ(r.ess, 256.0);
    EXPECT_FALSE(r.resampled);
    EXPECT_EQ(r.alive_fraction, 1.0);
    EXPECT_NEAR(r.log_z_increment, 0.0, 1e-12);
  }
}

double tempered_variance(double gamma, std::uint64_t seed) {
  const auto gauss = standard_normal_1d();
  SmcConfig cfg;
  cfg.sigmas = sigma_grid(NoiseSchedule{});
  cfg.n_particles = 4096;
  cfg.dim = 1;
  cfg.seed = seed;
  PotentialSpec spec;
  spec.kind = PotentialKind::Temperature;
  spec.gamma = constant_gamma_schedule(cfg.sigmas.size(), gamma);
  const auto res = smc_run(score_of(gauss), {&gauss}, spec, cfg);
  EXPECT_FALSE(res.collapsed);
  return variance(res.positions);
}

TEST(SmcRun, TemperingConcentratesGaussian) {
  EXPECT_NEAR(tempered_variance(1.0, 1), 0.5, 0.05);
  double last = kInf;
  for (double g : {0.0, 0.5, 1.0, 5.0}) {
    const double v = tempered_variance(g, 2);
    EXPECT_LT(v, last) << "gamma " << g;
    last = v;
  }
}

TEST(SmcRun, CompositionMatchesProductGaussian) {
  const auto [p1, p2] = composition_pair(PairLayout::CrossingGaussians);
  const auto product = product_gmm(p1, p2);
  SmcConfig cfg;
  cfg.sigmas = sigma_grid(NoiseSchedule{});
  cfg.n_particles = 4096;
  cfg.seed = 5;
  PotentialSpec spec;
  spec.kind = PotentialKind::CompositionProduct;
  spec.gamma = linear_gamma_schedule(cfg.sigmas.size(), 0.05);
  const auto res = smc_run(composed_score({&p1, &p2}), {&p1, &p2}, spec, cfg);
  ASSERT_FALSE(res.collapsed);
  const Vector m = res.positions.colwise().mean().transpose();
  const Tensor c = res.positions.rowwise() - m.transpose();
  const Eigen::MatrixXd cov = c.transpose() * c / double(c.rows() - 1);
  const Vector pm = product.mean();
  const Eigen::MatrixXd pc = product.covariance();
  for (int j = 0; j < 2; ++j) {
    EXPECT_NEAR(m[j], pm[j], 0.1 * std::abs(pm[j]));
    EXPECT_NEAR(cov(j, j), pc(j, j), 0.1 * pc(j, j));
  }
  EXPECT_LT(std::abs(cov(0, 1)), 0.1 * pc(0, 0));
}

TEST(SmcRun, BoundedRegionKeepsEverySample) {
  const auto tree = fractal_tree_gmm(4, 25.0, 0.7, 3);
  SmcConfig cfg;
  cfg.sigmas = sigma_grid(NoiseSchedule{});
  cfg.n_particles = 2048;
  cfg.seed = 8;
  PotentialSpec spec;
  spec.kind = PotentialKind::BoundedRegion;
  spec.box = {{0.25, -kInf}, {1.0, kInf}};
  const auto res = smc_run(score_of(tree), {&tree}, spec, cfg);
  ASSERT_FALSE(res.collapsed);
  for (Eigen::Index r = 0; r < res.positions.rows(); ++r) {
    ASSERT_TRUE(spec.box.contains(res.positions, r)) << res.positions.row(r);
  }
  EXPECT_TRUE(res.report.back().resampled || res.report.back().alive_fraction == 1.0);
}

TEST(SmcRun, CollapseIsReported) {
  const auto gauss = AnalyticGMM::gaussian(Vector::Zero(2), Eigen::MatrixXd::Identity(2, 2));
  SmcConfig cfg;
  cfg.sigmas = sigma_grid(NoiseSchedule{});
  cfg.n_particles = 64;
  PotentialSpec spec;
  spec.kind = PotentialKind::BoundedRegion;
  spec.box = {{500.0, 500.0}, {501.0, 501.0}};
  const auto res = smc_run(score_of(gauss), {&gauss}, spec, cfg);
  EXPECT_TRUE(res.collapsed);
  ASSERT_FALSE(res.report.empty());
  EXPECT_EQ(res.report.back().alive_fraction, 0.0);
}

TEST(SmcRun, ReportCsvLayout) {
  const auto gauss = standard_normal_1d();
  SmcConfig cfg;
  cfg.sigmas = {1.0, 0.5, 0.0};
  cfg.n_particles = 16;
  cfg.dim = 1;
  PotentialSpec spec;
  spec.kind = PotentialKind::Temperature;
  spec.gamma = {1.0, 1.0, 1.0};
  const auto res = smc_run(score_of(gauss), {&gauss}, spec, cfg);
  const std::string csv = smc_report_csv(res.report);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,sigma,ess,resampled,logZ_increment,alive_fraction");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  double sum = 0.0;
  for (const auto& r : res.report) {
    EXPECT_GE(r.ess, 1.0);
    EXPECT_LE(r.ess, 16.0);
    sum += r.log_z_increment;
  }
  EXPECT_NEAR(sum, res.log_z, 1e-12);
  EXPECT_THROW(smc_run(score_of(gauss), {&gauss}, spec, SmcConfig{{1.0, 0.0}, 1, 0.5, 0, 1}), ConfigError);
}

}  // namespace
}  // namespace edm2d
