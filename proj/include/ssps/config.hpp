#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "ssps/data.hpp"
#include "ssps/engine.hpp"

namespace ssps {

// Everything a run needs: engine settings plus where data comes from and
// where results go.
struct RunConfig {
  EngineConfig engine;
  std::string data = "spirals";
  std::string out = "runs/run";
};

// Flat JSON object with every field spelled out; key order is fixed so the
// dump is canonical.
nlohmann::ordered_json to_json(const RunConfig& config);

// Overlays the keys of `j` onto `base`. Unknown keys and mistyped values
// throw ConfigError naming the key.
RunConfig apply_json(RunConfig base, const nlohmann::json& j);

// Defaults, then the file at `path` (if any), then `overrides`. The result
// is validated.
RunConfig resolve_config(const std::optional<std::string>& path, const nlohmann::json& overrides);

// FNV-1a over the canonical dump.
std::uint64_t config_hash(const RunConfig& config);
std::uint64_t fnv1a(const std::string& bytes);

// Dataset source, written as "kind" or "kind:key=value,...":
//   spirals / blobs / probe   n, noise, seed, dim, classes (blobs), test
//   csv                       path, test, seed
//   idx                       images, labels, test, seed
//   cifar10                   dir
// File sources without a test split get one by stratified hold-out.
struct DataSpec {
  std::string kind;
  SyntheticSpec synthetic;
  std::string path;
  std::string labels_path;
  double test_fraction = 0.25;
  std::uint64_t seed = 0;
};

DataSpec parse_data_spec(const std::string& text);
Dataset load_data(const DataSpec& spec);
inline Dataset load_data(const std::string& text) { return load_data(parse_data_spec(text)); }

const char* decision_rule_name(DecisionRule rule);
DecisionRule parse_decision_rule(const std::string& name);
const char* eval_mode_name(EvalMode mode);
EvalMode parse_eval_mode(const std::string& name);

}  // namespace ssps
