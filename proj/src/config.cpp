#include "ssps/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "ssps/errors.hpp"

namespace ssps {

using nlohmann::json;
using nlohmann::ordered_json;

const char* decision_rule_name(DecisionRule rule) {
  return rule == DecisionRule::kArgmax ? "argmax" : "sample";
}

DecisionRule parse_decision_rule(const std::string& name) {
  if (name == "argmax") return DecisionRule::kArgmax;
  if (name == "sample") return DecisionRule::kSample;
  throw ConfigError("unknown decision rule '" + name + "' (argmax | sample)");
}

const char* eval_mode_name(EvalMode mode) {
  return mode == EvalMode::kSinglePath ? "single-path" : "all-candidates";
}

EvalMode parse_eval_mode(const std::string& name) {
  if (name == "single-path") return EvalMode::kSinglePath;
  if (name == "all-candidates") return EvalMode::kAllCandidates;
  throw ConfigError("unknown mode '" + name + "' (single-path | all-candidates)");
}

ordered_json to_json(const RunConfig& rc) {
  const EngineConfig& e = rc.engine;
  const SupernetOptions& s = e.supernet;
  ordered_json j;
  j["seed"] = e.seed;
  j["model"] = e.model;
  j["data"] = rc.data;
  j["out"] = rc.out;
  j["epochs"] = e.epochs;
  j["warmup_epochs"] = e.warmup_epochs;
  j["batch_size"] = e.batch_size;
  j["weight_lr"] = e.weight_lr;
  j["weight_momentum"] = e.weight_momentum;
  j["weight_decay"] = e.weight_decay;
  j["arch_lr"] = e.arch_lr;
  j["grad_clip"] = e.grad_clip;
  j["targets"] = {e.targets.c1, e.targets.c2};
  j["lambda"] = e.targets.lambda;
  j["temperature"] = {{"initial", e.temperature.initial},
                      {"rate", e.temperature.rate},
                      {"floor", e.temperature.floor}};
  j["decisions"] = e.decisions;
  j["decision"] = decision_rule_name(e.decision_rule);
  j["decision_interval"] = e.decision_interval;
  j["decision_end_fraction"] = e.decision_end_fraction;
  j["early_decide"] = e.early_decide;
  j["early_fraction"] = e.early_fraction;
  j["include_fixed_layers"] = e.include_fixed_layers;
  j["split_fraction"] = e.split_fraction;
  j["pretrain_epochs"] = e.pretrain_epochs;
  j["pretrain_lr"] = e.pretrain_lr;
  j["finetune_epochs"] = e.finetune_epochs;
  j["finetune_lr"] = e.finetune_lr;
  j["calibrate_thresholds"] = e.calibrate_thresholds;
  j["calibration_percentile"] = e.calibration_percentile;
  j["calibration_samples"] = e.calibration_samples;
  j["weight_space"] = s.weight_space.bits();
  j["activation_space"] = s.activation_space.bits();
  j["cells"] = s.combined_cells ? "combined" : "separate";
  j["mode"] = eval_mode_name(s.eval_mode);
  j["endpoint_bits"] = s.endpoint_bits;
  j["activation_threshold_init"] = s.activation_threshold_init;
  j["input_threshold_init"] = s.input_threshold_init;
  j["threads"] = e.threads;
  j["log_interval"] = e.log_interval;
  return j;
}

namespace {

template <class T>
T get_as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value for '" + key + "': " + v.dump());
  }
}

// Rejects negative numbers before unsigned conversion.
template <class T>
T get_unsigned(const json& v, const std::string& key) {
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError("config: '" + key + "' must be a non-negative integer");
  }
  return static_cast<T>(v.get<unsigned long long>());
}

SearchSpace space_from(const json& v, const std::string& key) {
  try {
    return SearchSpace(get_as<std::vector<int>>(v, key));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& ex) {
    throw ConfigError("config: bad value for '" + key + "': " + ex.what());
  }
}

}  // namespace

RunConfig apply_json(RunConfig rc, const json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  EngineConfig& e = rc.engine;
  SupernetOptions& s = e.supernet;
  using Setter = std::function<void(const json&, const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"seed", [&](const json& v, const std::string& k) { e.seed = get_unsigned<std::uint64_t>(v, k); }},
      {"model", [&](const json& v, const std::string& k) { e.model = get_as<std::string>(v, k); }},
      {"data", [&](const json& v, const std::string& k) { rc.data = get_as<std::string>(v, k); }},
      {"out", [&](const json& v, const std::string& k) { rc.out = get_as<std::string>(v, k); }},
      {"epochs", [&](const json& v, const std::string& k) { e.epochs = get_as<int>(v, k); }},
      {"warmup_epochs", [&](const json& v, const std::string& k) { e.warmup_epochs = get_as<int>(v, k); }},
      {"batch_size", [&](const json& v, const std::string& k) { e.batch_size = get_unsigned<std::size_t>(v, k); }},
      {"weight_lr", [&](const json& v, const std::string& k) { e.weight_lr = get_as<double>(v, k); }},
      {"weight_momentum", [&](const json& v, const std::string& k) { e.weight_momentum = get_as<double>(v, k); }},
      {"weight_decay", [&](const json& v, const std::string& k) { e.weight_decay = get_as<double>(v, k); }},
      {"arch_lr", [&](const json& v, const std::string& k) { e.arch_lr = get_as<double>(v, k); }},
      {"grad_clip", [&](const json& v, const std::string& k) { e.grad_clip = get_as<double>(v, k); }},
      {"targets",
       [&](const json& v, const std::string& k) {
         const auto t = get_as<std::vector<double>>(v, k);
         if (t.size() != 2) throw ConfigError("config: 'targets' needs two values");
         e.targets.c1 = t[0];
         e.targets.c2 = t[1];
       }},
      {"lambda", [&](const json& v, const std::string& k) { e.targets.lambda = get_as<double>(v, k); }},
      {"temperature",
       [&](const json& v, const std::string& k) {
         if (!v.is_object()) throw ConfigError("config: 'temperature' must be an object");
         for (const auto& [tk, tv] : v.items()) {
           if (tk == "initial") {
             e.temperature.initial = get_as<double>(tv, k + "." + tk);
           } else if (tk == "rate") {
             e.temperature.rate = get_as<double>(tv, k + "." + tk);
           } else if (tk == "floor") {
             e.temperature.floor = get_as<double>(tv, k + "." + tk);
           } else {
             throw ConfigError("config: unknown key 'temperature." + tk + "'");
           }
         }
       }},
      {"decisions", [&](const json& v, const std::string& k) { e.decisions = get_as<bool>(v, k); }},
      {"decision",
       [&](const json& v, const std::string& k) { e.decision_rule = parse_decision_rule(get_as<std::string>(v, k)); }},
      {"decision_interval", [&](const json& v, const std::string& k) { e.decision_interval = get_as<int>(v, k); }},
      {"decision_end_fraction",
       [&](const json& v, const std::string& k) { e.decision_end_fraction = get_as<double>(v, k); }},
      {"early_decide", [&](const json& v, const std::string& k) { e.early_decide = get_as<bool>(v, k); }},
      {"early_fraction", [&](const json& v, const std::string& k) { e.early_fraction = get_as<double>(v, k); }},
      {"include_fixed_layers",
       [&](const json& v, const std::string& k) { e.include_fixed_layers = get_as<bool>(v, k); }},
      {"split_fraction", [&](const json& v, const std::string& k) { e.split_fraction = get_as<double>(v, k); }},
      {"pretrain_epochs", [&](const json& v, const std::string& k) { e.pretrain_epochs = get_as<int>(v, k); }},
      {"pretrain_lr", [&](const json& v, const std::string& k) { e.pretrain_lr = get_as<double>(v, k); }},
      {"finetune_epochs", [&](const json& v, const std::string& k) { e.finetune_epochs = get_as<int>(v, k); }},
      {"finetune_lr", [&](const json& v, const std::string& k) { e.finetune_lr = get_as<double>(v, k); }},
      {"calibrate_thresholds",
       [&](const json& v, const std::string& k) { e.calibrate_thresholds = get_as<bool>(v, k); }},
      {"calibration_percentile",
       [&](const json& v, const std::string& k) { e.calibration_percentile = get_as<double>(v, k); }},
      {"calibration_samples",
       [&](const json& v, const std::string& k) { e.calibration_samples = get_unsigned<std::size_t>(v, k); }},
      {"weight_space", [&](const json& v, const std::string& k) { s.weight_space = space_from(v, k); }},
      {"activation_space", [&](const json& v, const std::string& k) { s.activation_space = space_from(v, k); }},
      {"cells",
       [&](const json& v, const std::string& k) {
         const auto c = get_as<std::string>(v, k);
         if (c != "combined" && c != "separate") {
           throw ConfigError("config: 'cells' must be combined or separate");
         }
         s.combined_cells = c == "combined";
       }},
      {"mode", [&](const json& v, const std::string& k) { s.eval_mode = parse_eval_mode(get_as<std::string>(v, k)); }},
      {"endpoint_bits", [&](const json& v, const std::string& k) { s.endpoint_bits = get_as<int>(v, k); }},
      {"activation_threshold_init",
       [&](const json& v, const std::string& k) { s.activation_threshold_init = get_as<double>(v, k); }},
      {"input_threshold_init",
       [&](const json& v, const std::string& k) { s.input_threshold_init = get_as<double>(v, k); }},
      {"threads", [&](const json& v, const std::string& k) { e.threads = get_as<int>(v, k); }},
      {"log_interval", [&](const json& v, const std::string& k) { e.log_interval = get_as<int>(v, k); }},
  };
  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("config: unknown key '" + key + "'");
    it->second(value, key);
  }
  return rc;
}

RunConfig resolve_config(const std::optional<std::string>& path, const json& overrides) {
  RunConfig rc;
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config file '" + *path + "'");
    json file;
    try {
      file = json::parse(in);
    } catch (const json::parse_error& ex) {
      throw ParseError("config '" + *path + "': " + ex.what(), ex.byte);
    }
    rc = apply_json(rc, file);
  }
  if (!overrides.is_null()) rc = apply_json(rc, overrides);
  if (!BitWidth::valid(rc.engine.supernet.endpoint_bits)) {
    throw ConfigError("config: endpoint_bits must be a valid bit width");
  }
  rc.engine.validate();
  parse_data_spec(rc.data);
  return rc;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t config_hash(const RunConfig& config) { return fnv1a(to_json(config).dump()); }

namespace {

std::map<std::string, std::string> parse_options(const std::string& text, const std::string& kind) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("data spec '" + kind + "': expected key=value, got '" + item + "'");
    }
    out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

double to_double(const std::string& s, const std::string& key) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("data spec: '" + key + "' is not a number: '" + s + "'");
}

std::uint64_t to_count(const std::string& s, const std::string& key) {
  try {
    std::size_t used = 0;
    unsigned long long v = std::stoull(s, &used);
    if (used == s.size() && s.find('-') == std::string::npos) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("data spec: '" + key + "' is not a non-negative integer: '" + s + "'");
}

}  // namespace

DataSpec parse_data_spec(const std::string& text) {
  DataSpec spec;
  const auto colon = text.find(':');
  spec.kind = text.substr(0, colon);
  const auto opts = parse_options(colon == std::string::npos ? "" : text.substr(colon + 1), spec.kind);
  auto allow = [&](std::initializer_list<const char*> keys) {
    for (const auto& [k, v] : opts) {
      bool ok = false;
      for (const char* a : keys) ok = ok || k == a;
      if (!ok) throw ConfigError("data spec '" + spec.kind + "': unknown key '" + k + "'");
    }
  };
  auto get = [&](const char* key) -> const std::string* {
    auto it = opts.find(key);
    return it == opts.end() ? nullptr : &it->second;
  };
  if (const auto* v = get("test")) spec.test_fraction = to_double(*v, "test");
  if (const auto* v = get("seed")) spec.seed = to_count(*v, "seed");

  if (spec.kind == "spirals" || spec.kind == "blobs" || spec.kind == "probe") {
    allow({"n", "noise", "seed", "dim", "classes", "test"});
    SyntheticSpec& s = spec.synthetic;
    s.kind = spec.kind == "spirals" ? GeneratorKind::kTwoSpirals
             : spec.kind == "blobs" ? GeneratorKind::kGaussianBlobs
                                    : GeneratorKind::kSensitivityProbe;
    if (const auto* v = get("n")) s.samples = to_count(*v, "n");
    if (const auto* v = get("noise")) s.noise = to_double(*v, "noise");
    if (const auto* v = get("dim")) s.dimension = to_count(*v, "dim");
    if (const auto* v = get("classes")) s.classes = to_count(*v, "classes");
    s.seed = spec.seed;
    s.test_fraction = spec.test_fraction;
  } else if (spec.kind == "csv") {
    allow({"path", "test", "seed"});
    if (const auto* v = get("path")) spec.path = *v;
    if (spec.path.empty()) throw ConfigError("data spec 'csv' needs path=FILE");
  } else if (spec.kind == "idx") {
    allow({"images", "labels", "test", "seed"});
    if (const auto* v = get("images")) spec.path = *v;
    if (const auto* v = get("labels")) spec.labels_path = *v;
    if (spec.path.empty() || spec.labels_path.empty()) {
      throw ConfigError("data spec 'idx' needs images=FILE,labels=FILE");
    }
  } else if (spec.kind == "cifar10") {
    allow({"dir"});
    if (const auto* v = get("dir")) spec.path = *v;
    if (spec.path.empty()) throw ConfigError("data spec 'cifar10' needs dir=PATH");
  } else {
    throw ConfigError("unknown data source '" + spec.kind + "' (spirals | blobs | probe | csv | idx | cifar10)");
  }
  if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0)) {
    throw ConfigError("data spec: test fraction must lie in (0, 1)");
  }
  return spec;
}

Dataset load_data(const DataSpec& spec) {
  Dataset d;
  if (spec.kind == "csv") {
    d = load_csv(spec.path);
  } else if (spec.kind == "idx") {
    d = load_idx(spec.path, spec.labels_path);
  } else if (spec.kind == "cifar10") {
    return load_cifar10(spec.path);
  } else {
    return generate_synthetic(spec.synthetic);
  }
  hold_out(d, spec.test_fraction, spec.seed);
  return d;
}

}  // namespace ssps
