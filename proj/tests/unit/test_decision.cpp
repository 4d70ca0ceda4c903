#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "ssps/decision.hpp"
#include "ssps/errors.hpp"

using namespace ssps;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Probabilities, WorkedValues) {
  for (double p : cell_probabilities(Tensor::zeros({25}))) EXPECT_NEAR(p, 0.04, 1e-15);
  EXPECT_NEAR(cell_probabilities(Tensor::from({5}, {1, 0, 0, 0, 0}))[0], 0.4046, 1e-4);
  Rng rng(31);
  for (int i = 0; i < 100; ++i) {
    double s = 0.0;
    for (double p : cell_probabilities(gradcheck::random_tensor(rng, {25}, -50, 50))) s += p;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Entropy, WorkedValues) {
  EXPECT_NEAR(cell_entropy(Tensor::zeros({5})), std::log(5.0), 1e-12);
  EXPECT_NEAR(cell_entropy(Tensor::zeros({5})), 1.60944, 1e-5);
  EXPECT_NEAR(cell_entropy(Tensor::zeros({25})), 3.21888, 1e-5);
  // 4 e^-20 (21 + ...) is about 1.73e-7: near one-hot, matching the oracle.
  const double sharp = cell_entropy(Tensor::from({5}, {20, 0, 0, 0, 0}));
  EXPECT_NEAR(sharp, oracle::entropy({20, 0, 0, 0, 0}), 1e-12);
  EXPECT_LE(sharp, 2e-7);
}

TEST(Entropy, OracleBoundsAndShiftInvariance) {
  Rng rng(32);
  for (int i = 0; i < 500; ++i) {
    const std::size_t M = 2 + rng.uniform_int(30);
    auto logits = gradcheck::random_tensor(rng, {M}, -8, 8);
    const double h = cell_entropy(logits);
    EXPECT_NEAR(h, oracle::entropy(values(logits)), 1e-12);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(static_cast<double>(M)) + 1e-12);
    auto shifted = values(logits);
    const double k = rng.uniform(-100, 100);
    for (auto& v : shifted) v += k;
    EXPECT_NEAR(cell_entropy(shifted), h, 1e-12);
  }
}

TEST(Decide, PicksMinimumEntropyCellAtArgmax) {
  DecisionState st({5, 5});
  // Cell 1 is sharper than cell 0.
  std::vector<Tensor> logits{Tensor::from({5}, {0.1, 0, 0.2, 0, 0}), Tensor::from({5}, {0, 0, 4, 0, 1})};
  ASSERT_LT(cell_entropy(logits[1]), cell_entropy(logits[0]));
  const auto ev = decide(st, logits, 7);
  ASSERT_TRUE(ev.has_value());
  EXPECT_EQ(ev->cell_id, 1u);
  EXPECT_EQ(ev->index, 2u);
  EXPECT_EQ(ev->epoch, 7);
  EXPECT_EQ(st.undecided().count(1), 0u);
  EXPECT_EQ(st.decided().at(1).index, 2u);
}

TEST(Decide, TiesGoToLowestIndex) {
  DecisionState st({4});
  std::vector<Tensor> logits{Tensor::from({4}, {0, 3, 3, 0})};
  EXPECT_EQ(decide(st, logits, 0)->index, 1u);
}

TEST(Decide, SpaceShrinksByDecidedFactor) {
  DecisionState st(std::vector<std::size_t>(5, 25));
  EXPECT_NEAR(st.remaining_space_log10(), 5 * std::log10(25.0), 1e-12);
  Rng rng(33);
  std::vector<Tensor> logits;
  for (int i = 0; i < 5; ++i) logits.push_back(gradcheck::random_tensor(rng, {25}, -1, 1));
  const auto first = decide(st, logits, 3);
  EXPECT_NEAR(first->space_log10, 4 * std::log10(25.0), 1e-12);
  EXPECT_NEAR(first->space_log10, 5.59, 0.005);
  double prev = first->space_log10;
  while (!st.undecided().empty()) {
    const auto ev = decide(st, logits, 4);
    EXPECT_NEAR(prev - ev->space_log10, std::log10(25.0), 1e-12);
    prev = ev->space_log10;
  }
  EXPECT_EQ(prev, 0.0);
  EXPECT_EQ(st.decided().size(), 5u);
  EXPECT_FALSE(decide(st, logits, 5).has_value());
}

TEST(Decide, MixedCandidateCounts) {
  DecisionState st({5, 25, 5});
  std::vector<Tensor> logits{Tensor::zeros({5}), Tensor::from({25}, std::vector<double>(25, 0.0)), Tensor::zeros({5})};
  logits[1].mutable_data()[3] = 30.0;
  const double before = st.remaining_space_log10();
  const auto ev = decide(st, logits, 0);
  EXPECT_EQ(ev->cell_id, 1u);
  EXPECT_NEAR(before - ev->space_log10, std::log10(25.0), 1e-12);
}

TEST(Decide, InvariantToLogitShift) {
  Rng rng(34);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Tensor> a, b;
    for (int i = 0; i < 4; ++i) {
      auto t = gradcheck::random_tensor(rng, {5}, -3, 3);
      auto s = values(t);
      const double k = rng.uniform(-20, 20);
      for (auto& v : s) v += k;
      a.push_back(t);
      b.push_back(Tensor::from({5}, s));
    }
    DecisionState sa(std::vector<std::size_t>(4, 5)), sb(std::vector<std::size_t>(4, 5));
    const auto ea = decide(sa, a, 0), eb = decide(sb, b, 0);
    EXPECT_EQ(ea->cell_id, eb->cell_id);
    EXPECT_EQ(ea->index, eb->index);
  }
}

TEST(Decide, SampleRuleFollowsProbabilities) {
  Rng rng(35);
  std::vector<Tensor> logits{Tensor::from({3}, {std::log(0.2), std::log(0.5), std::log(0.3)})};
  std::vector<int> counts(3, 0);
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    DecisionState st({3});
    ++counts[decide(st, logits, 0, DecisionRule::kSample, &rng)->index];
  }
  const double p[3] = {0.2, 0.5, 0.3};
  for (int k = 0; k < 3; ++k) EXPECT_LE(std::abs(counts[k] - n * p[k]), 3 * std::sqrt(n * p[k] * (1 - p[k])));
  DecisionState st({3});
  EXPECT_THROW(decide(st, logits, 0, DecisionRule::kSample, nullptr), ContractError);
}

TEST(EntropyLog, InitialAndDecided) {
  DecisionState st({5, 25, 5});
  std::vector<Tensor> logits{Tensor::zeros({5}), Tensor::zeros({25}), Tensor::zeros({5})};
  auto rows = entropy_log(st, logits, 0);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_NEAR(rows[0].entropy, std::log(5.0), 1e-12);
  EXPECT_NEAR(rows[1].entropy, std::log(25.0), 1e-12);
  st.mark_decided(1, {0, 0, 0.0});
  rows = entropy_log(st, logits, 1);
  EXPECT_EQ(rows[1].entropy, 0.0);
  EXPECT_EQ(rows[1].epoch, 1);
  EXPECT_THROW(st.mark_decided(1, {}), ContractError);
}

TEST(Schedule, DecidesEveryCellBeforeTheEnd) {
  for (int total : {10, 30, 60, 100}) {
    for (std::size_t cells : {1u, 2u, 5u, 19u, 40u}) {
      DecisionSchedule s;
      s.total_epochs = total;
      s.warmup_epochs = total / 5;
      const auto epochs = s.decision_epochs();
      ASSERT_FALSE(epochs.empty());
      EXPECT_GE(epochs.front(), s.warmup_epochs);
      EXPECT_LE(epochs.back(), total - 1);
      std::size_t prev = 0;
      for (int e = 0; e < total; ++e) {
        const std::size_t q = s.quota_after(e, cells);
        EXPECT_GE(q, prev);
        if (e < s.warmup_epochs) {
          EXPECT_EQ(q, 0u);
        }
        prev = q;
      }
      EXPECT_EQ(prev, cells);
      EXPECT_EQ(s.quota_after(epochs.back(), cells), cells);
    }
  }
}

TEST(Schedule, Validation) {
  DecisionSchedule s;
  s.warmup_epochs = s.total_epochs;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.interval = 0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.end_fraction = 1.5;
  EXPECT_THROW(s.validate(), ConfigError);
}
