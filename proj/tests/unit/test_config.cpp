#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "gradcheck.hpp"
#include "ssps/config.hpp"
#include "ssps/errors.hpp"
#include "ssps/serialize.hpp"

#include <unistd.h>

using namespace ssps;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("ssps_cfg_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(RunConfig, JsonRoundTripIsCanonical) {
  RunConfig c;
  c.engine.seed = 17;
  c.engine.model = "mlp4";
  c.engine.targets = {4.0, 3.5, 0.1};
  c.engine.supernet.combined_cells = false;
  c.engine.supernet.eval_mode = EvalMode::kAllCandidates;
  c.engine.decision_rule = DecisionRule::kSample;
  c.engine.supernet.weight_space = SearchSpace({2, 4, 8});
  c.data = "probe:n=500,dim=3";
  c.out = "somewhere";
  const auto j = to_json(c);
  const auto back = apply_json(RunConfig{}, nlohmann::json::parse(j.dump()));
  EXPECT_EQ(to_json(back).dump(), j.dump());
  EXPECT_EQ(config_hash(back), config_hash(c));
  c.engine.seed = 18;
  EXPECT_NE(config_hash(back), config_hash(c));
}

TEST(RunConfig, UnknownAndMistypedKeys) {
  EXPECT_THROW(apply_json({}, nlohmann::json::parse(R"({"epoch": 3})")), ConfigError);
  EXPECT_THROW(apply_json({}, nlohmann::json::parse(R"({"epochs": "three"})")), ConfigError);
  EXPECT_THROW(apply_json({}, nlohmann::json::parse(R"({"temperature": {"start": 1}})")), ConfigError);
  EXPECT_THROW(apply_json({}, nlohmann::json::parse(R"({"targets": [3]})")), ConfigError);
  EXPECT_THROW(apply_json({}, nlohmann::json::parse("[1, 2]")), ConfigError);
}

TEST(RunConfig, ResolutionOrder) {
  const auto dir = temp_dir("resolve");
  {
    std::ofstream(dir / "c.json") << R"({"epochs": 20, "seed": 5, "lambda": 0.2})";
  }
  const auto r = resolve_config((dir / "c.json").string(), nlohmann::json{{"seed", 9}});
  EXPECT_EQ(r.engine.epochs, 20);
  EXPECT_EQ(r.engine.seed, 9u);
  EXPECT_DOUBLE_EQ(r.engine.targets.lambda, 0.2);
  EXPECT_EQ(r.engine.warmup_epochs, EngineConfig{}.warmup_epochs);

  try {
    resolve_config((dir / "none.json").string(), nlohmann::json::object());
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("none.json"), std::string::npos);
  }
  {
    std::ofstream(dir / "bad.json") << "{\"epochs\": 20,,}";
  }
  EXPECT_THROW(resolve_config((dir / "bad.json").string(), nlohmann::json::object()), ParseError);
  // Validation runs on the resolved result.
  EXPECT_THROW(resolve_config(std::nullopt, nlohmann::json{{"warmup_epochs", 100}}), ConfigError);
  fs::remove_all(dir);
}

TEST(DataSpec, Parsing) {
  auto s = parse_data_spec("spirals");
  EXPECT_EQ(s.kind, "spirals");
  EXPECT_EQ(s.synthetic.kind, GeneratorKind::kTwoSpirals);
  s = parse_data_spec("blobs:n=300,classes=4,dim=3,noise=0.2,seed=7,test=0.5");
  EXPECT_EQ(s.synthetic.samples, 300u);
  EXPECT_EQ(s.synthetic.classes, 4u);
  EXPECT_EQ(s.synthetic.dimension, 3u);
  EXPECT_DOUBLE_EQ(s.synthetic.noise, 0.2);
  EXPECT_EQ(s.synthetic.seed, 7u);
  EXPECT_DOUBLE_EQ(s.synthetic.test_fraction, 0.5);
  s = parse_data_spec("csv:path=/tmp/x.csv,test=0.2");
  EXPECT_EQ(s.path, "/tmp/x.csv");
  s = parse_data_spec("idx:images=a,labels=b");
  EXPECT_EQ(s.path, "a");
  EXPECT_EQ(s.labels_path, "b");
  EXPECT_THROW(parse_data_spec("imagenet"), ConfigError);
  EXPECT_THROW(parse_data_spec("spirals:n=abc"), ConfigError);
  EXPECT_THROW(parse_data_spec("spirals:colour=red"), ConfigError);
  EXPECT_THROW(parse_data_spec("csv"), ConfigError);
  const auto d = load_data("probe:n=200,dim=3");
  EXPECT_EQ(d.size(), 200u);
  EXPECT_EQ(d.feature_shape, (Shape{3}));
}

TEST(Names, RoundTrip) {
  for (auto r : {DecisionRule::kArgmax, DecisionRule::kSample}) EXPECT_EQ(parse_decision_rule(decision_rule_name(r)), r);
  for (auto m : {EvalMode::kSinglePath, EvalMode::kAllCandidates}) EXPECT_EQ(parse_eval_mode(eval_mode_name(m)), m);
  EXPECT_THROW(parse_eval_mode("darts"), ConfigError);
}

TEST(PolicyFile, RoundTripAndSchema) {
  Policy p = Policy::uniform("mlp4", {"fc2", "fc3"}, 3, 4);
  p.layers[1].w_bit = 5;
  p.layers[0].decided_epoch = 13;
  p.e_wb = 3.123456789012345;
  p.e_ab = 4.5;
  p.seed = 42;
  const auto text = policy_to_json(p);
  const auto j = nlohmann::json::parse(text);
  EXPECT_EQ(j.size(), 5u);
  for (const char* k : {"model", "layers", "e_wb", "e_ab", "seed"}) EXPECT_TRUE(j.contains(k)) << k;
  for (const auto& l : j["layers"]) {
    EXPECT_EQ(l.size(), 4u);
    for (const char* k : {"name", "w_bit", "a_bit", "decided_epoch"}) EXPECT_TRUE(l.contains(k)) << k;
  }
  const auto back = policy_from_json(text);
  EXPECT_EQ(policy_to_json(back), text);
  EXPECT_EQ(back.e_wb, p.e_wb);
  EXPECT_EQ(back.layers[1].w_bit, 5);

  EXPECT_THROW(policy_from_json("{"), ParseError);
  auto extra = j;
  extra["colour"] = 1;
  EXPECT_THROW(policy_from_json(extra.dump()), ParseError);
  auto bad = j;
  bad["layers"][0]["w_bit"] = 11;
  EXPECT_THROW(policy_from_json(bad.dump()), ParseError);
  auto missing = j;
  missing.erase("e_ab");
  EXPECT_THROW(policy_from_json(missing.dump()), ParseError);
}

TEST(Checkpoint, FixedNetRoundTrip) {
  Rng rng(61);
  auto body = NetworkBody::initialize(builtin_seed("convnet6", {2, 6, 6}, 3), rng);
  auto net = FixedNet::from_policy(body.clone(), Policy::uniform("convnet6", {"a", "b", "c", "d", "e"}, 3, 4), 8);
  init_thresholds(net.body(), 2.0, 1.0);
  auto batch = gradcheck::random_tensor(rng, {4, 2, 6, 6}, 0.0, 1.0);
  net.forward(batch, ForwardMode::kTrain);  // moves running statistics
  const auto bytes = encode_checkpoint(checkpoint_of(net, 77));
  const auto ck = decode_checkpoint(bytes);
  EXPECT_EQ(ck.config_hash, 77u);
  EXPECT_FALSE(ck.supernet);
  EXPECT_EQ(encode_checkpoint(ck), bytes);
  auto back = ck.to_fixed();
  EXPECT_EQ(back.bits(), net.bits());
  EXPECT_EQ(values(back.forward(batch, ForwardMode::kEval)), values(net.forward(batch, ForwardMode::kEval)));
}

TEST(Checkpoint, SupernetRoundTripAndErrors) {
  Rng rng(62);
  auto net = Supernet::expand(NetworkBody::initialize(builtin_seed("mlp4", {3}, 2), rng), {});
  net.cell(0).logits().mutable_data()[4] = 1.25;
  net.cell(1).decide(7);
  const auto bytes = encode_checkpoint(checkpoint_of(net, 5));
  const auto ck = decode_checkpoint(bytes);
  EXPECT_TRUE(ck.supernet);
  ASSERT_EQ(ck.cells.size(), 2u);
  EXPECT_EQ(ck.cells[0].logits[4], 1.25);
  EXPECT_EQ(ck.cells[0].decided, -1);
  EXPECT_EQ(ck.cells[1].decided, 7);
  EXPECT_THROW(ck.to_fixed(), ContractError);

  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), ParseError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), ParseError);
  auto bad = bytes;
  bad[0] = 'X';
  try {
    decode_checkpoint(bad);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  auto ver = bytes;
  ver[8] = 9;
  EXPECT_THROW(decode_checkpoint(ver), ParseError);
}
