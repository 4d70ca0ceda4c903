#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "ssps/errors.hpp"
#include "ssps/ops.hpp"
#include "ssps/optim.hpp"
#include "ssps/tensor.hpp"

using namespace ssps;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Matmul, IdentityLeavesOperand) {
  auto a = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto b = Tensor::from({2, 2}, {3, 4, 5, 6});
  EXPECT_EQ(values(ops::matmul(a, b)), (std::vector<double>{3, 4, 5, 6}));
}

TEST(Matmul, RowTimesColumn) {
  auto c = ops::matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4}));
  EXPECT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(c[0], 11.0);
}

TEST(Matmul, GradientOfSumIsOtherOperand) {
  auto a = Tensor::from({1, 2}, {1, 2}, true);
  auto b = Tensor::from({2, 1}, {3, 4});
  backward(ops::sum(ops::matmul(a, b)));
  EXPECT_NEAR(a.grad()[0], 3.0, 1e-12);
  EXPECT_NEAR(a.grad()[1], 4.0, 1e-12);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST(Conv2d, OnesKernelSumsWindow) {
  auto y = ops::conv2d(Tensor::full({1, 1, 3, 3}, 1.0), Tensor::full({1, 1, 3, 3}, 1.0), {1, 0});
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y[0], 9.0);
}

TEST(Conv2d, CenterDeltaIsIdentity) {
  Rng rng(3);
  auto x = gradcheck::random_tensor(rng, {1, 1, 4, 5});
  std::vector<double> k(9, 0.0);
  k[4] = 1.0;
  auto y = ops::conv2d(x, Tensor::from({1, 1, 3, 3}, k), {1, 1});
  EXPECT_EQ(values(y), values(x));
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  auto r = gradcheck::check([](const auto& in) { return ops::conv2d(in[0], in[1], {1, 0}); },
                            {gradcheck::random_tensor(rng, {1, 1, 4, 4}), gradcheck::random_tensor(rng, {1, 1, 3, 3})},
                            rng);
  EXPECT_LE(r.max_rel_error, 1e-4);
}

TEST(Elementwise, RoundHalfAwayFromZero) {
  auto y = ops::round_ste(Tensor::from({4}, {1.5, -1.5, 0.49, -2.5}));
  EXPECT_EQ(values(y), (std::vector<double>{2.0, -2.0, 0.0, -3.0}));
}

TEST(Elementwise, RoundSteGradientIsIdentity) {
  Rng rng(5);
  auto x = gradcheck::random_tensor(rng, {7}, -4.0, 4.0);
  x.set_requires_grad(true);
  std::vector<double> c(7);
  for (auto& v : c) v = rng.uniform(-2.0, 2.0);
  auto y = ops::round_ste(x);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(y[i], std::round(x[i]));
  backward(ops::weighted_sum(y, c));
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(x.grad()[i], c[i]);
}

TEST(Elementwise, StraightThroughRoutesToSoft) {
  auto soft = Tensor::from({3}, {0.2, 0.5, 0.3}, true);
  auto y = ops::straight_through({0, 1, 0}, soft);
  EXPECT_EQ(values(y), (std::vector<double>{0, 1, 0}));
  backward(ops::weighted_sum(y, {1.0, 2.0, 3.0}));
  EXPECT_EQ(values(Tensor::from({3}, {soft.grad()[0], soft.grad()[1], soft.grad()[2]})),
            (std::vector<double>{1.0, 2.0, 3.0}));
}

TEST(Elementwise, ClampSaturates) {
  auto y = ops::clamp(Tensor::from({3}, {2.0, -3.0, 0.25}), -1.0, 1.0);
  EXPECT_EQ(values(y), (std::vector<double>{1.0, -1.0, 0.25}));
}

TEST(Softmax, UniformAndWorkedValue) {
  auto u = ops::softmax(Tensor::zeros({5}));
  for (double v : u.data()) EXPECT_NEAR(v, 0.2, 1e-15);
  auto p = ops::softmax(Tensor::from({5}, {1, 0, 0, 0, 0}));
  EXPECT_NEAR(p[0], 0.4046, 1e-4);
  EXPECT_NEAR(p[0], std::exp(1.0) / (std::exp(1.0) + 4.0), 1e-15);
}

TEST(Softmax, StableForLargeInputs) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = ops::softmax(gradcheck::random_tensor(rng, {9}, -1e3, 1e3));
    double s = 0.0;
    for (double v : p.data()) {
      ASSERT_TRUE(std::isfinite(v));
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(CrossEntropy, VanishesAsGapGrows) {
  double prev = 1e9;
  for (double gap : {1.0, 5.0, 10.0, 20.0, 40.0}) {
    const double l = ops::cross_entropy(Tensor::from({2, 2}, {gap, 0, 0, gap}), {0, 1}).item();
    EXPECT_LT(l, prev);
    prev = l;
  }
  EXPECT_LT(prev, 1e-15);
}

TEST(CrossEntropy, LabelOutOfRangeThrows) {
  EXPECT_THROW(ops::cross_entropy(Tensor::zeros({1, 2}), {2}), ContractError);
}

TEST(Backward, SumOfSquares) {
  auto w = Tensor::from({2}, {1, 2}, true);
  backward(ops::sum(ops::mul(w, w)));
  EXPECT_DOUBLE_EQ(w.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(w.grad()[1], 4.0);
}

TEST(Backward, DiamondAccumulates) {
  // y = x*x + 3x + x: three consumers of x.
  auto x = Tensor::from({1}, {1.5}, true);
  auto y = ops::add(ops::add(ops::mul(x, x), ops::scale(x, 3.0)), x);
  backward(ops::sum(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 1.5 + 3.0 + 1.0);
}

TEST(Backward, NonScalarLossThrows) {
  auto x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(backward(ops::scale(x, 2.0)), ContractError);
}

TEST(Backward, LeafGradientsAccumulateAcrossPasses) {
  auto x = Tensor::from({1}, {2.0}, true);
  backward(ops::sum(ops::square(x)));
  backward(ops::sum(ops::square(x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
}

TEST(Backward, TapeVisitsSharedNodeOnce) {
  auto x = Tensor::from({1}, {1.0}, true);
  auto h = ops::square(x);
  auto y = ops::add(h, h);
  EXPECT_EQ(Tape::record(ops::sum(y)).size(), 4u);
}

TEST(Gradcheck, AllOpsOnRandomInstances) {
  Rng rng(7);
  std::size_t instances = 0;
  for (const auto& c : gradcheck::op_cases()) {
    for (int trial = 0; trial < 6; ++trial) {
      const auto r = c.run(rng);
      EXPECT_LE(r.max_rel_error, 1e-4) << c.name << " trial " << trial;
      ++instances;
    }
  }
  EXPECT_GE(instances, 100u);
}

TEST(Optim, SgdZeroLearningRateIsNoOp) {
  auto w = Tensor::from({3}, {1, -2, 3}, true);
  backward(ops::sum(ops::square(w)));
  std::vector<Tensor> p{w};
  sgd_step(p, 0.0, 0.0);
  EXPECT_EQ(values(w), (std::vector<double>{1, -2, 3}));
}

TEST(Optim, AdamFirstStepOpposesGradient) {
  auto w = Tensor::from({4}, {0.5, -0.5, 2.0, -3.0}, true);
  const auto before = values(w);
  backward(ops::weighted_sum(w, {1.0, -2.0, 0.001, -0.3}));
  const std::vector<double> g(w.grad().begin(), w.grad().end());
  Adam opt({w}, AdamOptions{});
  opt.step();
  for (std::size_t i = 0; i < 4; ++i) {
    const double delta = w[i] - before[i];
    EXPECT_EQ(std::signbit(delta), !std::signbit(g[i])) << i;
    EXPECT_NE(delta, 0.0);
  }
}

TEST(Optim, ClipGradNorm) {
  auto w = Tensor::from({2}, {3.0, 4.0}, true);
  backward(ops::weighted_sum(w, {3.0, 4.0}));
  std::vector<Tensor> p{w};
  EXPECT_DOUBLE_EQ(clip_grad_norm(p, 1.0), 5.0);
  EXPECT_NEAR(w.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(w.grad()[1], 0.8, 1e-15);
}

TEST(Finite, NanIsReported) {
  const std::vector<double> v{1.0, std::nan("")};
  EXPECT_THROW(check_finite(v, "test"), NumericError);
}
