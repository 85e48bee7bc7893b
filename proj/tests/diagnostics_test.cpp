#include "edm2d/diagnostics.hpp"
#include "edm2d/errors.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace edm2d {
namespace {

using grad::NodeId;
using grad::Tape;

Tensor point(double a, double b) {
  Tensor t(1, 2);
  t << a, b;
  return t;
}

// v(x) = (-x2, x1) as x A^T.
grad::Builder rotation() {
  return [](Tape& tape, NodeId x) {
    Tensor at(2, 2);
    at << 0.0, 1.0, -1.0, 0.0;
    return tape.matmul(x, tape.constant(at));
  };
}

grad::Builder constant_field() {
  return [](Tape& tape, NodeId x) {
    return tape.add(tape.scale(x, 0.0), tape.constant(Tensor::Constant(tape.value(x).rows(), 2, 3.0)));
  };
}

TeacherModel random_teacher(std::uint64_t seed) {
  SineMlp net(2, {16, 16}, 6.0);
  Rng rng(seed);
  return TeacherModel(net, net.initialize(rng), 1.0);
}

EnergyModel random_energy(std::uint64_t seed) {
  SineMlp net(2, {16, 16}, 6.0);
  Rng rng(seed);
  return EnergyModel(net, net.initialize(rng), 1.0);
}

// |J - J^T|_F^2 from a central-difference Jacobian of the score.
double fd_asymmetry(const DiffusionField& m, const Tensor& x, double sigma) {
  const double h = 1e-5;
  Eigen::Matrix2d j;
  for (int c = 0; c < 2; ++c) {
    Tensor xp = x, xm = x;
    xp(0, c) += h;
    xm(0, c) -= h;
    j.col(c) = ((m.score(xp, sigma) - m.score(xm, sigma)) / (2.0 * h)).transpose();
  }
  return (j - j.transpose()).squaredNorm();
}

TEST(Hutchinson, RotationFieldRecoversEight) {
  const auto est = hutchinson_asymmetry({rotation(), {}}, point(0.3, -1.2), 10000, 7);
  EXPECT_EQ(est.n_probes, 10000);
  EXPECT_GT(est.raw_stderr, 0.0);
  EXPECT_NEAR(est.raw, 8.0, 3.0 * est.raw_stderr);
  // |v^T J|^2 = |v|^2 for a rotation, so the normalized value is close to 4.
  EXPECT_NEAR(est.normalized, 4.0, 3.0 * est.normalized_stderr + 1e-12);
}

TEST(Hutchinson, ConstantFieldIsZero) {
  const auto est = hutchinson_asymmetry({constant_field(), {}}, point(1.0, 2.0), 50, 1);
  EXPECT_EQ(est.raw, 0.0);
  EXPECT_TRUE(std::isnan(est.normalized));
}

TEST(Hutchinson, GradientFieldsAreSymmetric) {
  const auto e = random_energy(3);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> ls(std::log(0.002), std::log(10.0));
  for (int trial = 0; trial < 20; ++trial) {
    const double sigma = std::exp(ls(rng));
    const ProbedField f{e.score_builder(sigma), e.params()};
    const Tensor x = point(n(rng), n(rng));
    const Tensor probes = CounterRng(trial, StreamPurpose::Probe).normals(32, 2, 0);
    const Tensor xs = x.replicate(32, 1);
    const Tensor jv = grad::jvp(f.field, xs, f.params, probes);
    const Tensor vj = grad::vjp(f.field, xs, f.params, probes);
    // Per probe, relative to the field derivative scale.
    const Eigen::ArrayXd per = (vj - jv).rowwise().squaredNorm().array();
    const Eigen::ArrayXd den = vj.rowwise().squaredNorm().array();
    EXPECT_LE((per / den.maxCoeff()).maxCoeff(), 1e-10) << "sigma " << sigma;
    EXPECT_LE(hutchinson_asymmetry(f, x, 64, trial).normalized, 1e-10);
  }
}

TEST(Hutchinson, MatchesFiniteDifferenceJacobianOnRandomFields) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  int misses = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto t = random_teacher(100 + trial);
    const double sigma = 0.5;
    const Tensor x = point(n(rng), n(rng));
    const double exact = fd_asymmetry(t, x, sigma);
    const auto est = hutchinson_asymmetry({t.score_builder(sigma), t.params()}, x, 10000, trial);
    if (std::abs(est.raw - exact) > 3.0 * est.raw_stderr) ++misses;
    EXPECT_LT(std::abs(est.raw - exact), 5.0 * est.raw_stderr) << "trial " << trial;
  }
  // 3 stderr covers 99.7%; allow one chance miss in 20.
  EXPECT_LE(misses, 1);
}

TEST(Hutchinson, VjpMatchesTransposedJvp) {
  for (int trial = 0; trial < 10; ++trial) {
    const auto t = random_teacher(200 + trial);
    const ProbedField f{t.score_builder(0.3), t.params()};
    const Tensor x = CounterRng(trial, StreamPurpose::Probe).normals(1, 2, 1);
    const Tensor v = CounterRng(trial, StreamPurpose::Probe).normals(1, 2, 2);
    Eigen::Matrix2d j;
    for (int c = 0; c < 2; ++c) {
      Tensor e = Tensor::Zero(1, 2);
      e(0, c) = 1.0;
      j.col(c) = grad::jvp(f.field, x, f.params, e).transpose();
    }
    const Eigen::RowVector2d expected = v * j;
    const Tensor got = grad::vjp(f.field, x, f.params, v);
    EXPECT_LE((got - expected).norm(), 1e-8 * expected.norm());
  }
}

TEST(Hutchinson, RejectsBadInput) {
  EXPECT_THROW(hutchinson_asymmetry({rotation(), {}}, point(0, 0), 0, 1), std::invalid_argument);
  EXPECT_THROW(hutchinson_asymmetry({rotation(), {}}, Tensor::Zero(2, 2), 4, 1), std::invalid_argument);
  EXPECT_THROW(hutchinson_asymmetry({rotation(), {}}, point(NAN, 0), 4, 1), NumericError);
}

TEST(Hutchinson, Deterministic) {
  const auto t = random_teacher(1);
  const ProbedField f{t.score_builder(0.1), t.params()};
  const auto a = hutchinson_asymmetry(f, point(0.2, 0.4), 100, 3, 9);
  const auto b = hutchinson_asymmetry(f, point(0.2, 0.4), 100, 3, 9);
  EXPECT_EQ(a.raw, b.raw);
  EXPECT_EQ(a.normalized, b.normalized);
}

TEST(AsymmetrySweep, EnergyModelIsConservativeAtEveryLevel) {
  const auto e = random_energy(4);
  const Tensor data = CounterRng(1, StreamPurpose::Prior).normals(8, 2, 0);
  const std::vector<double> sigmas = {0.002, 0.05, 0.5, 5.0};
  const auto rows = asymmetry_sweep(
      score_field(e), sigmas, [&](std::size_t s) { return perturbed_points(data, sigmas[s], 4, 2, s); }, 16, 1);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) {
    EXPECT_LE(r.norm_mean, 1e-10);
    EXPECT_EQ(r.n_points, 4);
    EXPECT_EQ(r.n_probes, 16);
  }
}

TEST(AsymmetrySweep, StudentDominatedByTeacher) {
  const auto t = random_teacher(6);
  const auto s = init_from_teacher(t);
  const Tensor data = CounterRng(2, StreamPurpose::Prior).normals(8, 2, 0);
  const std::vector<double> sigmas = {0.01, 0.1, 1.0};
  const auto pts = [&](std::size_t k) { return perturbed_points(data, sigmas[k], 8, 3, k); };
  const auto teacher_rows = asymmetry_sweep(score_field(t), sigmas, pts, 32, 4);
  const auto student_rows = asymmetry_sweep(score_field(s), sigmas, pts, 32, 4);
  for (std::size_t k = 0; k < sigmas.size(); ++k) {
    EXPECT_GT(teacher_rows[k].norm_mean, 1e-6);
    EXPECT_LT(student_rows[k].norm_mean, teacher_rows[k].norm_mean);
  }
}

TEST(AsymmetrySweep, CsvLayoutAndConstantField) {
  const auto rows = asymmetry_sweep([](double) { return ProbedField{constant_field(), {}}; }, {0.5, 1.0},
                                    [](std::size_t) { return Tensor(Tensor::Ones(3, 2)); }, 8, 0);
  EXPECT_EQ(rows[0].raw_mean, 0.0);
  EXPECT_EQ(rows[1].raw_stderr, 0.0);
  const std::string csv = asymmetry_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "sigma,raw_mean,raw_stderr,norm_mean,norm_stderr,n_points,n_probes");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(PerturbedPoints, CyclesDataWithNoise) {
  Tensor data(2, 2);
  data << 1, 1, -1, -1;
  const Tensor p = perturbed_points(data, 0.0, 5, 1, 0);
  EXPECT_EQ(p.row(4), data.row(0));
  EXPECT_EQ(perturbed_points(data, 0.3, 5, 1, 2), perturbed_points(data, 0.3, 5, 1, 2));
  EXPECT_NE(perturbed_points(data, 0.3, 5, 1, 2), perturbed_points(data, 0.3, 5, 1, 3));
}

}  // namespace
}  // namespace edm2d
