#include "ssps/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ssps/config.hpp"
#include "ssps/errors.hpp"
#include "ssps/serialize.hpp"

namespace fs = std::filesystem;

namespace ssps {

fs::path fresh_run_dir(const fs::path& base) {
  if (!fs::exists(base)) return base;
  for (int n = 1;; ++n) {
    fs::path p = base;
    p += "." + std::to_string(n);
    if (!fs::exists(p)) return p;
  }
}

namespace {

struct Decided {
  std::optional<int> w, a;
  int epoch = 0;
};

// "decide:w3a4", "decide:w3" or "decide:a4".
bool parse_decide_event(const std::string& event, std::optional<int>& w, std::optional<int>& a) {
  const std::string prefix = "decide:";
  if (event.rfind(prefix, 0) != 0) return false;
  std::size_t i = prefix.size();
  while (i < event.size()) {
    const char side = event[i++];
    std::size_t j = i;
    while (j < event.size() && std::isdigit(static_cast<unsigned char>(event[j]))) ++j;
    if (j == i || (side != 'w' && side != 'a')) return false;
    const int bits = std::stoi(event.substr(i, j - i));
    (side == 'w' ? w : a) = bits;
    i = j;
  }
  return true;
}

std::string opt_str(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

}  // namespace

std::vector<std::pair<std::string, std::string>> report_series(const std::vector<MetricsRow>& rows) {
  auto search_phase = [](const std::string& p) { return p == "warmup" || p == "weight" || p == "arch"; };
  std::string loss = "epoch,iter,phase,task_loss,l_j\n";
  std::string ewb = "epoch,iter,phase,e_wb\n";
  std::string eab = "epoch,iter,phase,e_ab\n";
  std::string entropy = "epoch,cell_id,entropy\n";
  std::string order = "order,layer,epoch,w_bit,a_bit\n";
  std::string space = "epoch,event,space_log10\n";
  std::map<long, Decided> layers;
  int next = 0;
  for (const auto& r : rows) {
    const std::string head = std::to_string(r.epoch) + "," + std::to_string(r.iter) + "," + r.phase + ",";
    if (search_phase(r.phase)) {
      if (r.task_loss) loss += head + format_number(*r.task_loss) + "," + opt_str(r.l_j) + "\n";
      if (r.e_wb) ewb += head + format_number(*r.e_wb) + "\n";
      if (r.e_ab) eab += head + format_number(*r.e_ab) + "\n";
    }
    if (r.phase == "entropy" && r.cell_id && r.entropy) {
      entropy += std::to_string(r.epoch) + "," + std::to_string(*r.cell_id) + "," + format_number(*r.entropy) + "\n";
    }
    if ((r.phase == "search" || r.phase == "decision") && r.space_log10) {
      space += std::to_string(r.epoch) + "," + r.event + "," + format_number(*r.space_log10) + "\n";
    }
    std::optional<int> w, a;
    if (r.phase == "decision" && r.cell_id && parse_decide_event(r.event, w, a)) {
      const bool combined = w && a;
      const long layer = combined ? *r.cell_id : *r.cell_id / 2;
      Decided& d = layers[layer];
      if (w) d.w = w;
      if (a) d.a = a;
      d.epoch = std::max(d.epoch, r.epoch);
      if (d.w && d.a) {
        order += std::to_string(next++) + "," + std::to_string(layer) + "," + std::to_string(d.epoch) + "," +
                 std::to_string(*d.w) + "," + std::to_string(*d.a) + "\n";
      }
    }
  }
  return {{"loss_curve.csv", loss},         {"e_wb_curve.csv", ewb},
          {"e_ab_curve.csv", eab},          {"entropy_curves.csv", entropy},
          {"decision_order.csv", order},    {"space_curve.csv", space}};
}

namespace {

// Flags shared by the commands that resolve a run configuration.
struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string model, data, targets, out, mode, decision, include_fixed;
  std::optional<double> lambda;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON config file");
    app->add_option("--seed", seed, "run seed");
    app->add_option("--model", model, "seed network (mlp3, mlp4, convnet6, resnet20-cifar)");
    app->add_option("--data", data, "data source, e.g. spirals:n=2000,noise=0");
    app->add_option("--targets", targets, "constraint targets C1,C2");
    app->add_option("--lambda", lambda, "constraint weight");
    app->add_option("--out", out, "run directory (a numeric suffix is added if it exists)");
    app->add_option("--mode", mode, "single-path | all-candidates");
    app->add_option("--decision", decision, "argmax | sample");
    app->add_option("--include-fixed-layers", include_fixed, "count endpoint layers in the averages (BOOL)");
  }

  nlohmann::json overrides() const {
    nlohmann::json j = nlohmann::json::object();
    if (seed) j["seed"] = *seed;
    if (!model.empty()) j["model"] = model;
    if (!data.empty()) j["data"] = data;
    if (!targets.empty()) {
      const auto comma = targets.find(',');
      if (comma == std::string::npos) throw ConfigError("--targets expects C1,C2");
      try {
        std::size_t u1 = 0, u2 = 0;
        const std::string a = targets.substr(0, comma), b = targets.substr(comma + 1);
        const double c1 = std::stod(a, &u1), c2 = std::stod(b, &u2);
        if (u1 != a.size() || u2 != b.size()) throw std::invalid_argument("trailing");
        j["targets"] = {c1, c2};
      } catch (const std::logic_error&) {
        throw ConfigError("--targets expects two numbers, got '" + targets + "'");
      }
    }
    if (lambda) j["lambda"] = *lambda;
    if (!out.empty()) j["out"] = out;
    if (!mode.empty()) j["mode"] = mode;
    if (!decision.empty()) j["decision"] = decision;
    if (!include_fixed.empty()) {
      if (include_fixed == "true" || include_fixed == "1") {
        j["include_fixed_layers"] = true;
      } else if (include_fixed == "false" || include_fixed == "0") {
        j["include_fixed_layers"] = false;
      } else {
        throw ConfigError("--include-fixed-layers expects true or false");
      }
    }
    return j;
  }

  RunConfig resolve() const {
    return resolve_config(config.empty() ? std::nullopt : std::optional<std::string>(config), overrides());
  }
};

// Engine settings with the SSPS_THREADS cap applied. Thread count does not
// change results, so it stays out of the persisted config.
EngineConfig effective_engine(const RunConfig& rc) {
  EngineConfig e = rc.engine;
  if (const char* env = std::getenv("SSPS_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || cap < 1) throw ConfigError("SSPS_THREADS must be a positive integer");
    e.threads = std::min<int>(e.threads, static_cast<int>(cap));
  }
  return e;
}

fs::path start_run_dir(const RunConfig& rc) {
  const fs::path dir = fresh_run_dir(rc.out);
  fs::create_directories(dir);
  write_file((dir / "resolved_config.json").string(), to_json(rc).dump(2) + "\n");
  return dir;
}

std::vector<std::string> searchable_names(const NetworkBody& body) {
  std::vector<std::string> names;
  const auto& q = body.quant_layers();
  for (std::size_t i = 1; i + 1 < q.size(); ++i) names.push_back(body.seed().layers[q[i]].name);
  return names;
}

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

void print_policy(std::ostream& out, const Policy& p) {
  out << "layer,w_bit,a_bit,decided_epoch\n";
  for (const auto& l : p.layers) {
    out << l.name << "," << l.w_bit << "," << l.a_bit << "," << l.decided_epoch << "\n";
  }
  out << "e_wb=" << format_number(p.e_wb) << " e_ab=" << format_number(p.e_ab) << "\n";
}

int cmd_search(const CommonFlags& flags, std::ostream& out, std::ostream& err) {
  const RunConfig rc = flags.resolve();
  const EngineConfig engine = effective_engine(rc);
  const Dataset data = load_data(rc.data);
  const fs::path dir = start_run_dir(rc);
  std::ofstream metrics(dir / "metrics.csv", std::ios::binary);
  if (!metrics) throw ConfigError("cannot write '" + (dir / "metrics.csv").string() + "'");
  MetricsLog log(&metrics);
  SearchResult result = search(engine, data, &log);
  const Policy& policy = result.report.policy;
  write_policy(policy, (dir / "policy.json").string());
  write_checkpoint(checkpoint_of(result.state.net, config_hash(rc)), (dir / "checkpoint.bin").string());
  if (result.report.forced_final_decisions) err << "warning: cells left undecided at the end were forced\n";
  out << "run directory: " << dir.string() << "\n";
  print_policy(out, policy);
  return 0;
}

struct FinetuneFlags {
  std::string policy, checkpoint;
  std::optional<int> uniform_bits;
};

int cmd_finetune(const CommonFlags& flags, const FinetuneFlags& ft, std::ostream& out) {
  if (ft.policy.empty() == !ft.uniform_bits) throw ConfigError("finetune needs exactly one of --policy or --uniform-bits");
  const RunConfig rc = flags.resolve();
  const EngineConfig engine = effective_engine(rc);
  const Dataset data = load_data(rc.data);

  std::string ckpt_path = ft.checkpoint;
  if (ckpt_path.empty() && !ft.policy.empty()) {
    const fs::path beside = fs::path(ft.policy).parent_path() / "checkpoint.bin";
    if (fs::exists(beside)) ckpt_path = beside.string();
  }
  std::optional<Policy> loaded;
  if (!ft.policy.empty()) loaded = read_policy(ft.policy);

  const fs::path dir = start_run_dir(rc);
  std::ofstream metrics(dir / "metrics.csv", std::ios::binary);
  MetricsLog log(&metrics);

  NetworkBody body;
  if (!ckpt_path.empty()) {
    body = read_checkpoint(ckpt_path).body;
  } else {
    body = build_body(engine, data);
    pretrain(body, engine, data, &log);
    init_quantizers(body, engine, data, data.train);
  }

  const auto names = searchable_names(body);
  Policy policy;
  int endpoint_bits = engine.supernet.endpoint_bits;
  if (ft.uniform_bits) {
    const int b = *ft.uniform_bits;
    if (!BitWidth::valid(b)) throw ConfigError("--uniform-bits must be a valid bit width");
    policy = Policy::uniform(body.seed().name, names, b, b);
    if (BitWidth(b).is_float()) endpoint_bits = b;  // the full-precision control has no 8-bit layers
  } else {
    policy = *loaded;
    if (policy.model != body.seed().name) {
      throw ConfigError("policy is for model '" + policy.model + "', network is '" + body.seed().name + "'");
    }
    if (policy.layers.size() != names.size()) throw ConfigError("policy does not cover the searchable layers");
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (policy.layers[i].name != names[i]) {
        throw ConfigError("policy layer '" + policy.layers[i].name + "' does not match '" + names[i] + "'");
      }
    }
  }
  policy.seed = rc.engine.seed;
  std::tie(policy.e_wb, policy.e_ab) = policy_bit_metrics(body, policy, endpoint_bits, engine.include_fixed_layers);

  FixedNet net = FixedNet::from_policy(std::move(body), policy, endpoint_bits);
  const FinetuneReport rep = finetune(net, engine, data, &log);
  write_policy(policy, (dir / "policy.json").string());
  write_checkpoint(checkpoint_of(net, config_hash(rc)), (dir / "checkpoint.bin").string());
  nlohmann::ordered_json j;
  j["test_accuracy"] = rep.test_accuracy;
  j["test_loss"] = rep.test_loss;
  j["final_train_loss"] = rep.final_train_loss;
  j["epochs"] = rep.epochs;
  write_file((dir / "finetune.json").string(), j.dump(2) + "\n");

  out << "run directory: " << dir.string() << "\n";
  print_policy(out, policy);
  out << "test_accuracy=" << format_number(rep.test_accuracy) << " test_loss=" << format_number(rep.test_loss)
      << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& config_path, const std::string& split_name,
             std::ostream& out) {
  const Checkpoint ck = read_checkpoint(checkpoint);
  const std::string cfg =
      config_path.empty() ? (fs::path(checkpoint).parent_path() / "resolved_config.json").string() : config_path;
  const RunConfig rc = resolve_config(cfg, nlohmann::json());
  if (config_hash(rc) != ck.config_hash) {
    throw ConfigError("config '" + cfg + "' does not match the checkpoint's config hash");
  }
  const EngineConfig engine = effective_engine(rc);
  const Dataset data = load_data(rc.data);
  std::vector<std::size_t> idx;
  if (split_name == "test") {
    idx = data.test;
  } else if (split_name == "train") {
    idx = data.train;
  } else if (split_name == "sub_train" || split_name == "validation") {
    const SplitIndices s = split(data, engine.split_fraction, engine.seed);
    idx = split_name == "sub_train" ? s.sub_train : s.validation;
  } else {
    throw ConfigError("unknown split '" + split_name + "' (test | train | sub_train | validation)");
  }
  FixedNet net = ck.to_fixed();
  const Evaluation ev = evaluate(net, data, idx, engine.batch_size, engine.threads);
  out << "split=" << split_name << " samples=" << ev.samples << " accuracy=" << format_number(ev.accuracy)
      << " loss=" << format_number(ev.loss) << "\n";
  return 0;
}

int cmd_report(const std::string& run_dir, const std::string& out_dir, std::ostream& out) {
  const auto rows = read_metrics_csv((fs::path(run_dir) / "metrics.csv").string());
  fs::path dest = out_dir;
  if (dest.empty()) {
    fs::path base = fs::path(run_dir).lexically_normal();
    if (base.filename().empty()) base = base.parent_path();
    base += "-report";
    dest = fresh_run_dir(base);
  }
  fs::create_directories(dest);
  for (const auto& [name, text] : report_series(rows)) {
    write_file((dest / name).string(), text);
    out << (dest / name).string() << "\n";
  }
  return 0;
}

int cmd_compare(const std::vector<std::string>& dirs, std::ostream& out) {
  out << "run,W-Bits,A-Bits,Top-1,W-Comp,Ave-Bits\n";
  for (const auto& d : dirs) {
    const Policy p = read_policy((fs::path(d) / "policy.json").string());
    auto uniform = [&](auto get) -> std::string {
      for (const auto& l : p.layers) {
        if (get(l) != get(p.layers.front())) return "mixed";
      }
      return std::to_string(get(p.layers.front()));
    };
    std::string top1 = "-";
    const fs::path ft = fs::path(d) / "finetune.json";
    if (fs::exists(ft)) {
      const auto j = nlohmann::json::parse(read_file(ft.string()));
      top1 = fixed2(100.0 * j.at("test_accuracy").get<double>());
    }
    if (!(p.e_wb > 0.0)) throw ConfigError("policy in '" + d + "' has no positive e_wb");
    out << d << "," << uniform([](const LayerPolicy& l) { return l.w_bit; }) << ","
        << uniform([](const LayerPolicy& l) { return l.a_bit; }) << "," << top1 << "," << fixed2(32.0 / p.e_wb)
        << "," << fixed2(p.e_wb) << "/" << fixed2(p.e_ab) << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mixed-precision bit-width search", "ssps"};
  app.require_subcommand(1);

  CommonFlags search_flags, ft_flags;
  auto* search_cmd = app.add_subcommand("search", "search a bit-width policy");
  search_flags.attach(search_cmd);

  FinetuneFlags ft;
  auto* ft_cmd = app.add_subcommand("finetune", "fine-tune a fixed mixed-precision network");
  ft_flags.attach(ft_cmd);
  ft_cmd->add_option("--policy", ft.policy, "policy.json to fine-tune");
  ft_cmd->add_option("--uniform-bits", ft.uniform_bits, "uniform control at this bit width");
  ft_cmd->add_option("--checkpoint", ft.checkpoint, "start from this checkpoint's weights");

  std::string eval_ckpt, eval_config, eval_split = "test";
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--config", eval_config, "resolved config (default: beside the checkpoint)");
  eval_cmd->add_option("--split", eval_split, "test | train | sub_train | validation");

  std::string report_dir, report_out;
  auto* report_cmd = app.add_subcommand("report", "write plot-ready CSV series from a run's metrics");
  report_cmd->add_option("run_dir", report_dir, "run directory")->required();
  report_cmd->add_option("--out", report_out, "output directory (default: RUN_DIR-report)");

  std::vector<std::string> compare_dirs;
  auto* compare_cmd = app.add_subcommand("compare", "summary table over run directories");
  compare_cmd->add_option("run_dirs", compare_dirs, "run directories")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*search_cmd) return cmd_search(search_flags, out, err);
    if (*ft_cmd) return cmd_finetune(ft_flags, ft, out);
    if (*eval_cmd) return cmd_eval(eval_ckpt, eval_config, eval_split, out);
    if (*report_cmd) return cmd_report(report_dir, report_out, out);
    if (*compare_cmd) return cmd_compare(compare_dirs, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace ssps
