#include "edm2d/errors.hpp"
#include "edm2d/graph.hpp"
#include "edm2d/model.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

namespace edm2d {
namespace {

using grad::NodeId;
using grad::Tape;
using testing::central_difference;
using testing::relative_error;

Tensor point(std::initializer_list<double> values) {
  Tensor t(1, static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (const double v : values) t(0, i++) = v;
  return t;
}

Tensor random_point(Rng& rng, int d, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(1, d);
  for (Eigen::Index i = 0; i < d; ++i) t(0, i) = n(rng);
  return t;
}

// Scalar head h(x) . x on a small sine network; c_noise fixed.
grad::Builder mlp_energy(const SineMlp& net, double c_noise) {
  return [&net, c_noise](Tape& t, NodeId x) {
    const NodeId cn = t.constant(Tensor::Constant(t.value(x).rows(), 1, c_noise));
    return t.row_sum(t.mul(net.record(t, x, cn), x));
  };
}

grad::Builder mlp_field(const SineMlp& net, double c_noise) {
  return [&net, c_noise](Tape& t, NodeId x) {
    return net.record(t, x, t.constant(Tensor::Constant(t.value(x).rows(), 1, c_noise)));
  };
}

TEST(Evaluate, SquaredNorm) {
  const auto f = [](Tape& t, NodeId x) { return t.squared_norm(x); };
  EXPECT_DOUBLE_EQ(grad::evaluate(f, point({3, 4}), {})(0, 0), 25.0);
}

TEST(Evaluate, SineAtZero) {
  const auto f = [](Tape& t, NodeId x) { return t.sin(x); };
  EXPECT_DOUBLE_EQ(grad::evaluate(f, point({0}), {})(0, 0), 0.0);
}

TEST(Evaluate, SumOfSines) {
  const auto f = [](Tape& t, NodeId x) { return t.row_sum(t.sin(x)); };
  EXPECT_NEAR(grad::evaluate(f, point({0, std::numbers::pi / 2}), {})(0, 0), 1.0, 1e-15);
}

TEST(Evaluate, NonFiniteIsAnError) {
  const auto f = [](Tape& t, NodeId x) { return t.scale(t.squared_norm(x), 1e308); };
  EXPECT_THROW(grad::evaluate(f, point({1e10, 0}), {}), NumericError);
}

TEST(Evaluate, ShapeMismatchIsAnError) {
  const auto f = [](Tape& t, NodeId x) { return t.add(x, t.constant(Tensor::Zero(1, 3))); };
  EXPECT_THROW(grad::evaluate(f, point({1, 2}), {}), std::invalid_argument);
}

TEST(InputGradient, HalfSquaredNorm) {
  const auto f = [](Tape& t, NodeId x) { return t.scale(t.squared_norm(x), 0.5); };
  const auto r = grad::input_gradient(f, point({3, 4}), {});
  EXPECT_DOUBLE_EQ(r.input_grad(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(r.input_grad(0, 1), 4.0);
}

TEST(InputGradient, SineTimesCoordinate) {
  const auto f = [](Tape& t, NodeId x) { return t.mul(t.sin(t.slice_cols(x, 0, 1)), t.slice_cols(x, 1, 1)); };
  const auto r = grad::input_gradient(f, point({0, 5}), {});
  EXPECT_DOUBLE_EQ(r.input_grad(0, 0), 5.0);
  EXPECT_DOUBLE_EQ(r.input_grad(0, 1), 0.0);
}

TEST(InputGradient, NonScalarOutputIsAnError) {
  const auto f = [](Tape& t, NodeId x) { return t.sin(x); };
  EXPECT_THROW(grad::input_gradient(f, point({1, 2}), {}), std::invalid_argument);
}

TEST(InputGradient, SineMlpMatchesFiniteDifferences) {
  Rng rng(11);
  const SineMlp net(2, {16, 16}, 6.0);  // three affine layers
  for (int trial = 0; trial < 10; ++trial) {
    const std::vector<double> params = net.initialize(rng);
    const auto f = mlp_energy(net, -0.3);
    const Tensor x = random_point(rng, 2);
    const Tensor g = grad::input_gradient(f, x, params).input_grad;
    const Tensor fd = central_difference([&](const Tensor& p) { return grad::evaluate(f, p, params)(0, 0); }, x, 1e-5);
    EXPECT_LE(relative_error(g, fd), 1e-6) << "trial " << trial;
  }
}

TEST(InputGradient, BatchRowsAreIndependent) {
  Rng rng(3);
  const SineMlp net(2, {8}, 6.0);
  const std::vector<double> params = net.initialize(rng);
  const auto f = mlp_energy(net, 0.1);
  Tensor batch(3, 2);
  batch << 0.1, 0.2, -0.5, 0.3, 0.9, -1.1;
  const Tensor g = grad::input_gradient(f, batch, params).input_grad;
  for (Eigen::Index r = 0; r < 3; ++r) {
    const Tensor single = grad::input_gradient(f, batch.row(r), params).input_grad;
    EXPECT_LE((g.row(r) - single).norm(), 1e-14);
  }
}

TEST(InputGradient, Linearity) {
  Rng rng(5);
  const SineMlp net(2, {8}, 6.0);
  const std::vector<double> params = net.initialize(rng);
  const auto f = mlp_energy(net, 0.0);
  const auto g = [](Tape& t, NodeId x) { return t.row_sum(t.sin(t.mul(x, x))); };
  const double a = 2.0;
  const double b = -0.5;
  const auto combo = [&](Tape& t, NodeId x) { return t.add(t.scale(f(t, x), a), t.scale(g(t, x), b)); };
  const Tensor x = random_point(rng, 2);
  const Tensor lhs = grad::input_gradient(combo, x, params).input_grad;
  const Tensor rhs = a * grad::input_gradient(f, x, params).input_grad + b * grad::input_gradient(g, x, params).input_grad;
  EXPECT_LE((lhs - rhs).norm(), 1e-13 * (1.0 + rhs.norm()));
}

TEST(InputGradient, Deterministic) {
  Rng rng(8);
  const SineMlp net(2, {8, 8}, 6.0);
  const std::vector<double> params = net.initialize(rng);
  const Tensor x = random_point(rng, 2);
  const auto a = grad::input_gradient(mlp_energy(net, 0.2), x, params);
  const auto b = grad::input_gradient(mlp_energy(net, 0.2), x, params);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.input_grad, b.input_grad);
}

// E(x) = theta |x|^2 / 2, loss = |grad E - x|^2 => dloss/dtheta = 2 (theta - 1) |x|^2.
struct OneParameterCase {
  static NodeId energy(Tape& t, NodeId x) {
    const NodeId theta = t.broadcast_rows(t.parameter(0, 1, 1), t.value(x).rows());
    return t.mul(theta, t.scale(t.squared_norm(x), 0.5));
  }
  static NodeId loss(Tape& t, NodeId x, NodeId g) { return t.sum_rows(t.squared_norm(t.sub(g, x))); }
};

TEST(SecondOrder, OneParameterClosedForm) {
  const Tensor x = point({1, 1});
  for (const double theta : {0.0, 0.5, 1.0, 3.0}) {
    const std::vector<double> params{theta};
    const auto g = grad::second_order_param_gradient(OneParameterCase::energy, OneParameterCase::loss, x, params);
    ASSERT_EQ(g.size(), 1u);
    EXPECT_NEAR(g[0], 4.0 * (theta - 1.0), 1e-12);
    const auto loss_at = [&](const std::vector<double>& p) {
      Tape t(p);
      const NodeId xn = t.input(x);
      const NodeId e = OneParameterCase::energy(t, xn);
      const NodeId wrt[] = {xn};
      return t.value(OneParameterCase::loss(t, xn, t.gradient(e, wrt)[0]))(0, 0);
    };
    EXPECT_NEAR(central_difference(loss_at, params, 1e-6)[0], g[0], 1e-6);
  }
}

TEST(SecondOrder, ZeroLossGivesZeroGradient) {
  const Tensor x = point({0.3, -0.7});
  const std::vector<double> params{1.0};
  const auto g = grad::second_order_param_gradient(OneParameterCase::energy, OneParameterCase::loss, x, params);
  EXPECT_EQ(g[0], 0.0);
}

TEST(SecondOrder, SineMlpMatchesFiniteDifferences) {
  Rng rng(21);
  const SineMlp net(2, {8, 8}, 6.0);
  for (int trial = 0; trial < 5; ++trial) {
    const std::vector<double> params = net.initialize(rng);
    Tensor x(4, 2);
    Tensor v(4, 2);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      x.data()[i] = std::normal_distribution<double>(0, 1)(rng);
      v.data()[i] = std::normal_distribution<double>(0, 1)(rng);
    }
    const auto f = mlp_energy(net, 0.4);
    const auto loss = [&](Tape& t, NodeId, NodeId g) {
      return t.scale(t.sum_rows(t.squared_norm(t.add(g, t.constant(v)))), 0.25);
    };
    const auto g = grad::second_order_param_gradient(f, loss, x, params);
    const auto loss_at = [&](const std::vector<double>& p) {
      Tape t(p);
      const NodeId xn = t.input(x);
      const NodeId wrt[] = {xn};
      return t.value(loss(t, xn, t.gradient(f(t, xn), wrt)[0]))(0, 0);
    };
    EXPECT_LE(relative_error(g, central_difference(loss_at, params, 1e-6)), 1e-4) << "trial " << trial;
  }
}

TEST(Jvp, LinearField) {
  Tensor a(2, 2);
  a << 1.0, 2.0, -3.0, 0.5;
  const auto field = [&](Tape& t, NodeId x) { return t.matmul(x, t.constant(a), false, true); };
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = random_point(rng, 2);
    const Tensor nu = random_point(rng, 2);
    const Tensor jv = grad::jvp(field, x, {}, nu);
    const Tensor expected = (a * nu.transpose()).transpose();
    EXPECT_LE((jv - expected).norm(), 1e-14);
  }
}

TEST(Jvp, GradientOfHalfSquaredNormIsIdentity) {
  const auto field = [](Tape& t, NodeId x) {
    const NodeId wrt[] = {x};
    return t.gradient(t.scale(t.squared_norm(x), 0.5), wrt)[0];
  };
  const Tensor nu = point({0.3, -1.7});
  EXPECT_LE((grad::jvp(field, point({2, 5}), {}, nu) - nu).norm(), 1e-15);
}

TEST(Jvp, RandomFieldMatchesFiniteDifferences) {
  Rng rng(31);
  const SineMlp net(2, {16, 16}, 6.0);
  for (int trial = 0; trial < 10; ++trial) {
    const std::vector<double> params = net.initialize(rng);
    const auto field = mlp_field(net, 0.1);
    const Tensor x = random_point(rng, 2);
    const Tensor nu = random_point(rng, 2);
    const double h = 1e-5;
    const Tensor fd = (grad::evaluate(field, x + h * nu, params) - grad::evaluate(field, x - h * nu, params)) / (2 * h);
    EXPECT_LE(relative_error(grad::jvp(field, x, params, nu), fd), 1e-6) << "trial " << trial;
  }
}

TEST(Jvp, ShapeMismatchIsAnError) {
  const auto field = [](Tape&, NodeId x) { return x; };
  EXPECT_THROW(grad::jvp(field, point({1, 2}), {}, point({1, 2, 3})), std::invalid_argument);
}

TEST(Vjp, TransposeOfJvp) {
  Rng rng(41);
  const SineMlp net(2, {16}, 6.0);
  const std::vector<double> params = net.initialize(rng);
  const auto field = mlp_field(net, -0.2);
  const Tensor x = random_point(rng, 2);
  // Assemble J column by column from jvp and row by row from vjp.
  Tensor j_fwd(2, 2);
  Tensor j_rev(2, 2);
  for (int k = 0; k < 2; ++k) {
    Tensor e = Tensor::Zero(1, 2);
    e(0, k) = 1.0;
    j_fwd.col(k) = grad::jvp(field, x, params, e).row(0).transpose();
    j_rev.row(k) = grad::vjp(field, x, params, e).row(0);
  }
  EXPECT_LE(relative_error(j_rev, j_fwd), 1e-12);
}

TEST(Tape, UnreachedInputGetsZeroGradient) {
  Tape t;
  const NodeId x = t.input(point({1, 2}));
  const NodeId y = t.input(point({3, 4}));
  const NodeId wrt[] = {y};
  const NodeId g = t.gradient(t.squared_norm(x), wrt)[0];
  EXPECT_EQ(t.value(g), Tensor::Zero(1, 2));
}

TEST(Tape, MatMulTransposeVariantsMatchFiniteDifferences) {
  Rng rng(4);
  Tensor a0(3, 2), b0(3, 2);
  for (Eigen::Index i = 0; i < 6; ++i) {
    a0.data()[i] = std::normal_distribution<double>()(rng);
    b0.data()[i] = std::normal_distribution<double>()(rng);
  }
  for (int ta = 0; ta < 2; ++ta) {
    for (int tb = 0; tb < 2; ++tb) {
      // Pick shapes so op(A) op(B) is defined, then reduce to a scalar.
      const Tensor a = ta ? a0 : Tensor(a0.transpose());
      const Tensor b = tb ? Tensor(b0.transpose()) : b0;
      std::vector<double> flat(a.data(), a.data() + a.size());
      flat.insert(flat.end(), b.data(), b.data() + b.size());
      const auto build = [&](Tape& t) {
        const NodeId pa = t.parameter(0, a.rows(), a.cols());
        const NodeId pb = t.parameter(static_cast<std::size_t>(a.size()), b.rows(), b.cols());
        const NodeId c = t.matmul(pa, pb, ta != 0, tb != 0);
        return t.sum_rows(t.row_sum(t.sin(c)));
      };
      Tape tape(flat);
      const auto g = tape.parameter_gradient(build(tape));
      const auto fd = central_difference(
          [&](const std::vector<double>& p) {
            Tape t(p);
            return t.value(build(t))(0, 0);
          },
          flat, 1e-6);
      EXPECT_LE(relative_error(g, fd), 1e-8) << ta << tb;
    }
  }
}

}  // namespace
}  // namespace edm2d
