#include "edm2d/errors.hpp"
#include "edm2d/rng.hpp"
#include "edm2d/schedule.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace edm2d {
namespace {

TEST(SigmaGrid, EndpointsAndTerminalZero) {
  const NoiseSchedule s;
  const auto grid = sigma_grid(s);
  ASSERT_EQ(grid.size(), 41u);
  EXPECT_EQ(grid.front(), 10.0);
  EXPECT_EQ(grid[39], 0.002);
  EXPECT_EQ(grid.back(), 0.0);
}

TEST(SigmaGrid, LinearWhenRhoIsOne) {
  NoiseSchedule s;
  s.rho = 1.0;
  s.n_steps = 3;
  s.sigma_min = 1.0;
  s.sigma_max = 3.0;
  const auto grid = sigma_grid(s);
  ASSERT_EQ(grid.size(), 4u);
  EXPECT_DOUBLE_EQ(grid[0], 3.0);
  EXPECT_DOUBLE_EQ(grid[1], 2.0);
  EXPECT_DOUBLE_EQ(grid[2], 1.0);
  EXPECT_EQ(grid[3], 0.0);
}

TEST(SigmaGrid, MatchesWarpedFormula) {
  NoiseSchedule s;
  s.n_steps = 17;
  const auto grid = sigma_grid(s);
  for (int i = 0; i < s.n_steps; ++i) {
    const double a = std::pow(s.sigma_max, 1.0 / s.rho);
    const double b = std::pow(s.sigma_min, 1.0 / s.rho);
    EXPECT_NEAR(grid[i], std::pow(a + i / 16.0 * (b - a), s.rho), 1e-12 * grid[i]);
  }
}

TEST(SigmaGrid, StrictlyDecreasing) {
  for (const int n : {2, 5, 40, 400}) {
    NoiseSchedule s;
    s.n_steps = n;
    const auto grid = sigma_grid(s);
    for (std::size_t i = 1; i < grid.size(); ++i) EXPECT_LT(grid[i], grid[i - 1]);
  }
}

TEST(SigmaGrid, RejectsInvalidSchedules) {
  NoiseSchedule s;
  s.n_steps = 1;
  EXPECT_THROW(sigma_grid(s), ConfigError);
  s = NoiseSchedule{};
  s.sigma_min = 20.0;
  EXPECT_THROW(sigma_grid(s), ConfigError);
  s = NoiseSchedule{};
  s.sigma_data = 0.0;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Perturb, Examples) {
  Tensor x0(1, 2);
  x0 << 0.5, -1.5;
  EXPECT_EQ(perturb(x0, 3.0, Tensor::Zero(1, 2)), x0);
  Tensor eps(1, 2);
  eps << 1.0, -1.0;
  const Tensor y = perturb(Tensor::Zero(1, 2), 2.0, eps);
  EXPECT_EQ(y(0, 0), 2.0);
  EXPECT_EQ(y(0, 1), -2.0);
  EXPECT_THROW(perturb(x0, -0.1, eps), std::invalid_argument);
}

TEST(Perturb, StandardNormalGainsUnitVariance) {
  Rng rng(4);
  std::normal_distribution<double> n;
  const Eigen::Index count = 100000;
  Tensor x0(count, 2);
  Tensor eps(count, 2);
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    x0.data()[i] = n(rng);
    eps.data()[i] = n(rng);
  }
  const Tensor y = perturb(x0, 1.0, eps);
  const Tensor c = y.rowwise() - y.colwise().mean();
  const Eigen::MatrixXd cov = c.transpose() * c / double(count - 1);
  EXPECT_NEAR(cov(0, 0), 2.0, 0.1);
  EXPECT_NEAR(cov(1, 1), 2.0, 0.1);
  EXPECT_NEAR(cov(0, 1), 0.0, 0.1);
}

TEST(Precond, LimitsAndSubstitutions) {
  const Precond tiny = precond_at(1e-9, 0.8);
  EXPECT_NEAR(tiny.c_skip, 1.0, 1e-15);
  EXPECT_NEAR(tiny.c_out, 0.0, 1e-8);
  const double sd = 0.7;
  const Precond at = precond_at(sd, sd);
  EXPECT_NEAR(at.c_in, 1.0 / (sd * std::sqrt(2.0)), 1e-15);
  EXPECT_NEAR(at.c_skip, 0.5, 1e-15);
  EXPECT_NEAR(at.c_out, sd / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(at.c_noise, std::log(sd) / 4.0, 1e-15);
}

TEST(Precond, Identities) {
  for (const double sd : {0.3, 1.0, 2.5}) {
    for (double sigma = 0.002; sigma < 20.0; sigma *= 1.7) {
      const Precond p = precond_at(sigma, sd);
      EXPECT_NEAR(p.c_out * p.c_in, sigma * sd / (sigma * sigma + sd * sd), 1e-14);
      EXPECT_NEAR(p.c_skip, (p.c_in * sd) * (p.c_in * sd), 1e-14);
      EXPECT_GT(p.c_in, 0.0);
      EXPECT_GT(p.c_out, 0.0);
      EXPECT_GT(p.c_skip, 0.0);
      EXPECT_LE(p.c_skip, 1.0);
    }
  }
}

TEST(ScoreFromDenoiser, Examples) {
  Tensor x(1, 2);
  x << 2.0, 0.0;
  EXPECT_EQ(score_from_denoiser(x, x, 0.4), Tensor::Zero(1, 2));
  Tensor d(1, 2);
  d << 1.0, 0.0;
  const Tensor s = score_from_denoiser(x, d, 1.0);
  EXPECT_EQ(s(0, 0), -1.0);
  EXPECT_EQ(s(0, 1), 0.0);
  EXPECT_THROW(score_from_denoiser(x, d, 0.0), std::invalid_argument);
}

TEST(ScoreFromDenoiser, GaussianPosteriorMean) {
  // For N(0, I) data the posterior mean is x / (1 + sigma^2).
  Tensor x(3, 2);
  x << 0.3, -1.0, 2.0, 0.5, -0.7, 0.1;
  for (const double sigma : {0.1, 1.0, 4.0}) {
    const Tensor s = score_from_denoiser(x, x / (1.0 + sigma * sigma), sigma);
    EXPECT_LT((s + x / (1.0 + sigma * sigma)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(LossWeight, InverseSquaredOutputScale) {
  for (const double sigma : {0.01, 0.5, 3.0}) {
    const double c_out = precond_at(sigma, 0.5).c_out;
    EXPECT_NEAR(loss_weight(sigma, 0.5) * c_out * c_out, 1.0, 1e-12);
  }
}

TEST(EstimateSigmaData, RootMeanSquare) {
  Tensor x(2, 2);
  x << 1.0, -1.0, 3.0, 3.0;
  EXPECT_DOUBLE_EQ(estimate_sigma_data(x), std::sqrt(5.0));
  EXPECT_THROW(estimate_sigma_data(Tensor(0, 2)), ConfigError);
}

}  // namespace
}  // namespace edm2d
