#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "ssps/errors.hpp"
#include "ssps/supernet.hpp"

using namespace ssps;

namespace {

const QuantizeFn kIdentity = [](std::size_t, const Tensor& x, LayerParams& p) {
  return std::pair<Tensor, Tensor>{x, p.weight};
};

SeedNetwork dense_seed(std::size_t in, std::size_t hidden, bool bias) {
  SeedNetwork s;
  s.name = "dense";
  s.input_shape = {in};
  s.classes = 3;
  LayerSpec a{LayerKind::kDense, "a", in, hidden, 1, 1, 0, bias, true};
  LayerSpec b{LayerKind::kDense, "b", hidden, hidden, 1, 1, 0, bias, true};
  LayerSpec c{LayerKind::kDense, "c", hidden, 3, 1, 1, 0, bias, false};
  s.layers = {a, b, c};
  return s;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Costs, DenseWorkedValues) {
  const auto costs = layer_costs(dense_seed(10, 20, true));
  EXPECT_EQ(costs[0].num_params, 10 * 20 + 20);
  EXPECT_EQ(costs[0].flops, 200);
}

TEST(Costs, MatchEnumerationOracle) {
  for (const auto& name : builtin_seed_names()) {
    const Shape shape = name.rfind("mlp", 0) == 0 ? Shape{7} : Shape{3, 32, 32};
    const auto seed = builtin_seed(name, shape, 10);
    const auto got = layer_costs(seed);
    const auto want = oracle::layer_costs(seed);
    ASSERT_EQ(got.size(), want.size()) << name;
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].num_params, want[i].num) << name << " layer " << i;
      EXPECT_EQ(got[i].flops, want[i].flops) << name << " layer " << i;
    }
  }
}

TEST(Seeds, Catalog) {
  Rng rng(1);
  auto count = [&](const std::string& name, const Shape& shape) {
    return NetworkBody::initialize(builtin_seed(name, shape, 10), rng).quant_layers().size();
  };
  EXPECT_EQ(count("mlp3", {2}), 3u);
  EXPECT_EQ(count("mlp4", {2}), 4u);
  EXPECT_EQ(count("resnet20-cifar", {3, 32, 32}), 20u);
  auto body = NetworkBody::initialize(builtin_seed("convnet6", {1, 8, 8}, 10), rng);
  EXPECT_EQ(Supernet::expand(std::move(body), {}).searchable_count(), 5u);
  EXPECT_THROW(builtin_seed("nope", {2}, 2), ConfigError);
}

TEST(Seeds, ValidationRejectsBadSpecs) {
  auto s = dense_seed(4, 8, true);
  s.layers[1].in = 5;
  EXPECT_THROW(s.validate(), ConfigError);
  auto t = dense_seed(4, 8, true);
  t.layers.erase(t.layers.begin() + 1);
  t.layers[1].in = 4;
  EXPECT_THROW(t.validate(), ConfigError);
}

TEST(Supernet, Mlp3HasOneCellOf25) {
  Rng rng(2);
  auto net = Supernet::expand(NetworkBody::initialize(builtin_seed("mlp3", {2}, 2), rng), {});
  EXPECT_EQ(net.searchable_count(), 1u);
  EXPECT_EQ(net.cell_count(), 1u);
  EXPECT_EQ(net.cell(0).candidate_count(), 25u);
  EXPECT_NEAR(net.remaining_space_log10(), std::log10(25.0), 1e-12);
  EXPECT_TRUE(net.is_endpoint(0));
  EXPECT_TRUE(net.is_endpoint(2));
  for (const auto& l : net.arch_params()) {
    for (double v : l.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Supernet, SeparateCellsPerLayer) {
  Rng rng(3);
  SupernetOptions o;
  o.combined_cells = false;
  auto net = Supernet::expand(NetworkBody::initialize(builtin_seed("mlp4", {2}, 2), rng), o);
  EXPECT_EQ(net.cell_count(), 4u);
  EXPECT_EQ(net.cell(0).kind(), CellKind::kWeight);
  EXPECT_EQ(net.cell(1).kind(), CellKind::kActivation);
  EXPECT_EQ(net.layer_of_cell(3), 1u);
}

TEST(Supernet, FloatCellsReproduceSeed) {
  for (const auto& name : {"mlp3", "convnet6"}) {
    Rng rng(4);
    const Shape shape = std::string(name) == "mlp3" ? Shape{5} : Shape{2, 8, 8};
    auto body = NetworkBody::initialize(builtin_seed(name, shape, 4), rng);
    Shape bs{6};
    bs.insert(bs.end(), shape.begin(), shape.end());
    auto batch = gradcheck::random_tensor(rng, bs, 0.0, 1.0);
    auto reference = body.clone();
    const auto want = reference.forward(batch, ForwardMode::kEval, kIdentity);

    SupernetOptions o;
    o.weight_space = SearchSpace({16, 32});
    o.activation_space = SearchSpace({16, 32});
    o.endpoint_bits = 32;
    auto net = Supernet::expand(body.clone(), o);
    for (int trial = 0; trial < 5; ++trial) {
      EXPECT_EQ(values(net.forward(batch, 1.0, rng, ForwardMode::kEval).logits), values(want)) << name;
    }
    auto fixed = FixedNet::uniform(body.clone(), 32);
    EXPECT_EQ(values(fixed.forward(batch, ForwardMode::kEval)), values(want)) << name;
  }
}

TEST(Supernet, DeterministicRepeat) {
  Rng init(5);
  auto body = NetworkBody::initialize(builtin_seed("mlp4", {3}, 2), init);
  auto batch = gradcheck::random_tensor(init, {8, 3}, 0.0, 1.0);
  auto a = Supernet::expand(body.clone(), {});
  auto b = Supernet::expand(body.clone(), {});
  Rng ra(42), rb(42);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(values(a.forward(batch, 2.0, ra, ForwardMode::kTrainFrozen).logits),
              values(b.forward(batch, 2.0, rb, ForwardMode::kTrainFrozen).logits));
  }
}

TEST(Supernet, EvaluationCountsSinglePathVsAllCandidates) {
  for (const auto& name : {"mlp4", "convnet6"}) {
    Rng rng(6);
    const Shape shape = std::string(name) == "mlp4" ? Shape{3} : Shape{1, 6, 6};
    auto body = NetworkBody::initialize(builtin_seed(name, shape, 2), rng);
    Shape bs{2};
    bs.insert(bs.end(), shape.begin(), shape.end());
    auto batch = gradcheck::random_tensor(rng, bs, 0.0, 1.0);
    SupernetOptions o;
    auto single = Supernet::expand(body.clone(), o);
    o.eval_mode = EvalMode::kAllCandidates;
    auto all = Supernet::expand(body.clone(), o);
    single.forward(batch, 1.0, rng, ForwardMode::kTrain);
    all.forward(batch, 1.0, rng, ForwardMode::kTrain);
    EXPECT_EQ(single.evaluations(), single.cell_count());
    EXPECT_EQ(all.evaluations(), 25 * single.cell_count());
  }
}

TEST(Supernet, AllCandidatesModeMatchesSinglePathForward) {
  Rng init(7);
  auto body = NetworkBody::initialize(builtin_seed("mlp4", {3}, 2), init);
  auto batch = gradcheck::random_tensor(init, {4, 3}, 0.0, 1.0);
  SupernetOptions o;
  auto single = Supernet::expand(body.clone(), o);
  o.eval_mode = EvalMode::kAllCandidates;
  auto all = Supernet::expand(body.clone(), o);
  Rng ra(8), rb(8);
  for (int i = 0; i < 3; ++i) {
    const auto x = values(single.forward(batch, 1.0, ra, ForwardMode::kEval).logits);
    const auto y = values(all.forward(batch, 1.0, rb, ForwardMode::kEval).logits);
    for (std::size_t k = 0; k < x.size(); ++k) EXPECT_NEAR(x[k], y[k], 1e-12);
  }
}

TEST(Materialize, DecidedSupernetEqualsFixedNet) {
  for (bool combined : {true, false}) {
    Rng rng(9);
    auto body = NetworkBody::initialize(builtin_seed("convnet6", {2, 6, 6}, 3), rng);
    SupernetOptions o;
    o.combined_cells = combined;
    auto net = Supernet::expand(std::move(body), o);
    for (std::size_t c = 0; c < net.cell_count(); ++c) {
      net.cell(c).decide(rng.uniform_int(net.cell(c).candidate_count()));
    }
    EXPECT_TRUE(net.all_decided());
    EXPECT_TRUE(net.arch_params().empty());
    const auto policy = net.policy({}, 0, false);
    ASSERT_EQ(policy.layers.size(), net.searchable_count());
    auto fixed = FixedNet::materialize(net, policy);
    EXPECT_EQ(fixed.arch_param_count(), 0u);
    auto batch = gradcheck::random_tensor(rng, {5, 2, 6, 6}, 0.0, 1.0);
    const auto a = values(net.forward(batch, 1.0, rng, ForwardMode::kEval).logits);
    const auto b = values(fixed.forward(batch, ForwardMode::kEval));
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-12);
  }
}

TEST(Materialize, IncompletePolicyThrows) {
  Rng rng(10);
  auto net = Supernet::expand(NetworkBody::initialize(builtin_seed("mlp4", {2}, 2), rng), {});
  EXPECT_THROW(net.policy({}, 0, false), ContractError);
  Policy p = Policy::uniform("mlp4", {"fc2"}, 3, 3);
  EXPECT_THROW(FixedNet::materialize(net, p), ContractError);
}

TEST(Materialize, FixedNetSharesNoStorage) {
  Rng rng(11);
  auto net = Supernet::expand(NetworkBody::initialize(builtin_seed("mlp3", {2}, 2), rng), {});
  net.cell(0).decide(7);
  auto fixed = FixedNet::materialize(net, net.policy({}, 0, false));
  fixed.body().quant_params(1).weight.mutable_data()[0] += 1.0;
  EXPECT_NE(fixed.body().quant_params(1).weight[0], net.body().quant_params(1).weight[0]);
  EXPECT_EQ(fixed.bits()[1], (std::pair<int, int>{3, 4}));
  EXPECT_EQ(fixed.bits()[0], (std::pair<int, int>{8, 8}));
}

TEST(Expand, ThresholdInit) {
  Rng rng(12);
  auto body = NetworkBody::initialize(builtin_seed("mlp3", {2}, 2), rng);
  SupernetOptions o;
  o.activation_threshold_init = 4.0;
  o.input_threshold_init = 1.0;
  auto net = Supernet::expand(std::move(body), o);
  for (std::size_t q = 0; q < 3; ++q) {
    const auto& p = net.body().quant_params(q);
    double mx = 0.0;
    for (double v : p.weight.data()) mx = std::max(mx, std::abs(v));
    EXPECT_DOUBLE_EQ(p.w_threshold[0], mx);
    EXPECT_DOUBLE_EQ(p.a_threshold[0], q == 0 ? 1.0 : 4.0);
  }
}

TEST(PolicyMetrics, UniformPolicy) {
  Rng rng(13);
  auto body = NetworkBody::initialize(builtin_seed("mlp4", {2}, 2), rng);
  auto p = Policy::uniform("mlp4", {"fc2", "fc3"}, 3, 5);
  const auto [wb, ab] = policy_bit_metrics(body, p, 8, false);
  EXPECT_DOUBLE_EQ(wb, 3.0);
  EXPECT_NEAR(ab, std::sqrt(15.0), 1e-12);
  const auto [wb8, ab8] = policy_bit_metrics(body, p, 8, true);
  EXPECT_GT(wb8, 3.0);
  EXPECT_GT(ab8, std::sqrt(15.0));
}
