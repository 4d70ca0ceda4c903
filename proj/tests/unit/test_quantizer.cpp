#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "ssps/errors.hpp"
#include "ssps/ops.hpp"
#include "ssps/optim.hpp"
#include "ssps/quantizer.hpp"

using namespace ssps;

namespace {

double qw(double w, int n, double t) {
  return quantize_weights(Tensor::from({1}, {w}), BitWidth(n), Tensor::scalar(t))[0];
}
double qa(double x, int m, double t) {
  return quantize_activations(Tensor::from({1}, {x}), BitWidth(m), Tensor::scalar(t))[0];
}

bool on_grid(double v, const std::vector<double>& grid) {
  return std::any_of(grid.begin(), grid.end(), [&](double g) { return std::abs(g - v) <= 1e-12; });
}

}  // namespace

TEST(QuantizeWeights, WorkedValues) {
  EXPECT_NEAR(qw(0.3, 3, 0.5), 1.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(qw(2.0, 3, 0.5), 0.5);
  EXPECT_DOUBLE_EQ(qw(-2.0, 3, 0.5), -0.5);
  EXPECT_DOUBLE_EQ(qw(1.234567, 32, 0.5), 1.234567);
  EXPECT_DOUBLE_EQ(qw(-7.5, 16, 0.5), -7.5);
}

TEST(QuantizeWeights, SignQuantizerAtOneBit) {
  EXPECT_DOUBLE_EQ(qw(0.01, 1, 0.7), 0.7);
  EXPECT_DOUBLE_EQ(qw(-0.01, 1, 0.7), -0.7);
}

TEST(QuantizeActivations, WorkedValues) {
  EXPECT_NEAR(qa(0.26, 2, 1.0), 1.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(qa(-0.4, 2, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(qa(2.5, 4, 2.5), 2.5);
  EXPECT_DOUBLE_EQ(qa(9.0, 4, 2.5), 2.5);
}

TEST(Grid, Enumerations) {
  EXPECT_EQ(grid_of(2, 1.0, true), (std::vector<double>{-1.0, 0.0, 1.0}));
  const auto u = grid_of(2, 1.0, false);
  ASSERT_EQ(u.size(), 4u);
  EXPECT_NEAR(u[1], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(u[2], 2.0 / 3.0, 1e-15);
  const auto s = grid_of(3, 0.5, true);
  ASSERT_EQ(s.size(), 7u);
  for (std::size_t i = 1; i < s.size(); ++i) EXPECT_NEAR(s[i] - s[i - 1], 1.0 / 6.0, 1e-15);
}

TEST(Quantizer, NonPositiveThresholdThrows) {
  EXPECT_THROW(qw(0.1, 3, 0.0), ContractError);
  EXPECT_THROW(qw(0.1, 3, -1.0), ContractError);
  EXPECT_THROW(qa(0.1, 3, 0.0), ContractError);
  EXPECT_THROW(BitWidth(9), ContractError);
  EXPECT_THROW(BitWidth(0), ContractError);
}

class QuantizerProperties : public ::testing::TestWithParam<int> {};

TEST_P(QuantizerProperties, IdempotentOnGridMonotoneNearest) {
  const int n = GetParam();
  Rng rng(100 + n);
  for (int trial = 0; trial < 2000; ++trial) {
    const double t = rng.uniform(0.05, 3.0);
    const double w1 = rng.uniform(-2 * t, 2 * t), w2 = rng.uniform(-2 * t, 2 * t);
    const double q1 = qw(w1, n, t), q2 = qw(w2, n, t);
    EXPECT_EQ(qw(q1, n, t), q1);
    EXPECT_TRUE(on_grid(q1, grid_of(n, t, true)));
    if (w1 <= w2) { EXPECT_LE(q1, q2); }
    const double d = t / ((1 << (n - 1)) - 1);
    if (std::abs(w1) <= t) { EXPECT_LE(std::abs(q1 - w1), d / 2 + 1e-12); }

    const double x = rng.uniform(-t, 2 * t);
    const double a = qa(x, n, t);
    EXPECT_EQ(qa(a, n, t), a);
    EXPECT_TRUE(on_grid(a, grid_of(n, t, false)));
    const double da = t / ((1 << n) - 1);
    if (x >= 0 && x <= t) { EXPECT_LE(std::abs(a - x), da / 2 + 1e-12); }
  }
}

TEST_P(QuantizerProperties, MatchesBruteForceOracle) {
  const int n = GetParam();
  Rng rng(200 + n);
  for (int trial = 0; trial < 2000; ++trial) {
    const double t = rng.uniform(0.01, 4.0);
    const double w = rng.uniform(-1.5 * t, 1.5 * t);
    EXPECT_NEAR(qw(w, n, t), oracle::quantize_weight(w, n, t), 1e-12);
    EXPECT_NEAR(qa(w, n, t), oracle::quantize_activation(w, n, t), 1e-12);
  }
}

INSTANTIATE_TEST_SUITE_P(Bits, QuantizerProperties, ::testing::Range(2, 9));

TEST(QuantizeWeights, GradientRouting) {
  auto w = Tensor::from({4}, {0.1, -0.2, 0.9, -1.5}, true);
  auto t = Tensor::scalar(0.5, true);
  backward(ops::weighted_sum(quantize_weights(w, BitWidth(3), t), {1.0, 2.0, 3.0, 4.0}));
  // Inside the range: identity. Saturated: zero to w, signed to t.
  EXPECT_DOUBLE_EQ(w.grad()[0], 1.0);
  EXPECT_DOUBLE_EQ(w.grad()[1], 2.0);
  EXPECT_DOUBLE_EQ(w.grad()[2], 0.0);
  EXPECT_DOUBLE_EQ(w.grad()[3], 0.0);
  EXPECT_DOUBLE_EQ(t.grad()[0], 3.0 - 4.0);
}

TEST(QuantizeActivations, GradientRouting) {
  auto x = Tensor::from({3}, {-0.5, 0.4, 2.0}, true);
  auto t = Tensor::scalar(1.0, true);
  backward(ops::weighted_sum(quantize_activations(x, BitWidth(2), t), {1.0, 2.0, 3.0}));
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 0.0);
  EXPECT_DOUBLE_EQ(t.grad()[0], 3.0);
}

TEST(QuantizeWeights, FloatPassThroughKeepsGradient) {
  auto w = Tensor::from({2}, {5.0, -7.0}, true);
  backward(ops::weighted_sum(quantize_weights(w, BitWidth(32), Tensor::scalar(0.5)), {2.0, 3.0}));
  EXPECT_DOUBLE_EQ(w.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(w.grad()[1], 3.0);
}
