#include "ssps/engine.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <sstream>
#include <thread>

#include "ssps/errors.hpp"

namespace ssps {

void EngineConfig::validate() const {
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (warmup_epochs < 0 || warmup_epochs >= epochs) {
    throw ConfigError("warm-up epochs must lie in [0, epochs)");
  }
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  for (double r : {weight_lr, arch_lr, pretrain_lr, finetune_lr}) {
    if (!(r > 0.0)) throw ConfigError("learning rates must be positive");
  }
  if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  if (weight_momentum < 0.0 || weight_momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (!(grad_clip > 0.0)) throw ConfigError("gradient clip must be positive");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw ConfigError("split fraction must lie in (0, 1)");
  }
  if (pretrain_epochs < 0 || finetune_epochs < 0) throw ConfigError("epoch counts must be non-negative");
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (log_interval < 1) throw ConfigError("log interval must be at least 1");
  if (!(calibration_percentile > 0.0 && calibration_percentile <= 100.0)) {
    throw ConfigError("calibration percentile must lie in (0, 100]");
  }
  targets.validate(std::min(supernet.weight_space.min_bits(), supernet.activation_space.min_bits()),
                   std::max(supernet.weight_space.max_bits(), supernet.activation_space.max_bits()));
  temperature.validate();
  schedule().validate();
}

DecisionSchedule EngineConfig::schedule() const {
  DecisionSchedule s;
  s.total_epochs = epochs;
  s.warmup_epochs = warmup_epochs;
  s.interval = decision_interval;
  s.end_fraction = decision_end_fraction;
  s.early_decide = early_decide;
  s.early_fraction = early_fraction;
  return s;
}

Rng make_stream(std::uint64_t seed, Stream s) {
  return Rng::stream(seed, static_cast<std::uint64_t>(s));
}

// ---------------------------------------------------------------- batches

BatchStream::BatchStream(std::vector<std::size_t> indices, std::size_t batch_size, Rng rng)
    : indices_(std::move(indices)), batch_size_(batch_size), rng_(std::move(rng)) {
  if (indices_.empty()) throw ConfigError("batch stream over an empty index set");
  if (batch_size_ == 0) throw ConfigError("batch size must be positive");
}

std::size_t BatchStream::batches_per_epoch() const {
  return (indices_.size() + batch_size_ - 1) / batch_size_;
}

std::vector<std::vector<std::size_t>> BatchStream::epoch() {
  auto order = indices_;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng_.uniform_int(i)]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < order.size(); s += batch_size_) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + batch_size_)));
  }
  return out;
}

std::vector<std::size_t> BatchStream::next() {
  if (cursor_ >= pending_.size()) {
    pending_ = epoch();
    cursor_ = 0;
  }
  return pending_[cursor_++];
}

// ---------------------------------------------------------------- evaluation

double accuracy_from_logits(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("accuracy: logits must be [N, C] with N labels");
  }
  if (labels.empty()) return 0.0;
  const std::size_t c = logits.dim(1);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = logits.data().subspan(i * c, c);
    if (static_cast<int>(argmax_lowest(row)) == labels[i]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

namespace {

struct BatchResult {
  std::size_t correct = 0;
  double loss_sum = 0.0;
};

BatchResult score_batch(const Tensor& logits, std::span<const int> labels) {
  const std::size_t c = logits.dim(1);
  BatchResult r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = logits.data().subspan(i * c, c);
    if (static_cast<int>(argmax_lowest(row)) == labels[i]) ++r.correct;
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    r.loss_sum += mx + std::log(z) - row[static_cast<std::size_t>(labels[i])];
  }
  return r;
}

class GradFreeze {
 public:
  explicit GradFreeze(std::vector<Tensor> ts) : ts_(std::move(ts)) {
    for (auto& t : ts_) {
      prev_.push_back(t.requires_grad());
      t.set_requires_grad(false);
    }
  }
  ~GradFreeze() {
    for (std::size_t i = 0; i < ts_.size(); ++i) ts_[i].set_requires_grad(prev_[i]);
  }
  GradFreeze(const GradFreeze&) = delete;
  GradFreeze& operator=(const GradFreeze&) = delete;

 private:
  std::vector<Tensor> ts_;
  std::vector<bool> prev_;
};

void clamp_thresholds(NetworkBody& body) {
  for (std::size_t q = 0; q < body.quant_layers().size(); ++q) {
    auto& p = body.quant_params(q);
    for (auto* t : {&p.w_threshold, &p.a_threshold}) {
      auto d = t->mutable_data();
      d[0] = std::max(d[0], kMinThreshold);
    }
  }
}

std::pair<Tensor, Tensor> full_precision(std::size_t, const Tensor& x, LayerParams& p) {
  return {x, p.weight};
}

double cosine_lr(double base, long step, long total) {
  if (total <= 1) return base;
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

}  // namespace

Evaluation evaluate(const ForwardFn& forward, const Dataset& data, std::span<const std::size_t> indices,
                    std::size_t batch_size, int threads) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  Evaluation ev;
  ev.samples = indices.size();
  if (indices.empty()) return ev;
  const std::size_t nb = (indices.size() + batch_size - 1) / batch_size;
  std::vector<BatchResult> results(nb);
  auto run = [&](std::size_t b) {
    const auto idx = indices.subspan(b * batch_size, std::min(batch_size, indices.size() - b * batch_size));
    const auto labels = data.labels_of(idx);
    results[b] = score_batch(forward(data.batch(idx)), labels);
  };
  const auto workers = static_cast<std::size_t>(std::clamp<int>(threads, 1, static_cast<int>(nb)));
  if (workers == 1) {
    for (std::size_t b = 0; b < nb; ++b) run(b);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t b = w; b < nb; b += workers) run(b);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  // Compensated sum in batch order, independent of the worker count.
  std::size_t correct = 0;
  double sum = 0.0, comp = 0.0;
  for (const auto& r : results) {
    correct += r.correct;
    const double y = r.loss_sum - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(indices.size());
  ev.loss = sum / static_cast<double>(indices.size());
  return ev;
}

Evaluation evaluate(FixedNet& net, const Dataset& data, std::span<const std::size_t> indices,
                    std::size_t batch_size, int threads) {
  GradFreeze freeze(net.weight_params());
  return evaluate([&](const Tensor& x) { return net.forward(x, ForwardMode::kEval); }, data, indices,
                  batch_size, threads);
}

// ---------------------------------------------------------------- pretraining

NetworkBody build_body(const EngineConfig& config, const Dataset& data) {
  const auto seed = builtin_seed(config.model, data.feature_shape, data.classes);
  Rng rng = make_stream(config.seed, Stream::kInit);
  return NetworkBody::initialize(seed, rng);
}

void init_quantizers(NetworkBody& body, const EngineConfig& config, const Dataset& data,
                     std::span<const std::size_t> indices) {
  init_thresholds(body, config.supernet.activation_threshold_init, config.supernet.input_threshold_init);
  if (!config.calibrate_thresholds) return;
  if (indices.empty()) throw ConfigError("no samples for threshold calibration");
  const auto n = std::min(indices.size(), std::max<std::size_t>(config.calibration_samples, 1));
  calibrate_activation_thresholds(body, data.batch(indices.first(n)), config.calibration_percentile);
}

void pretrain(NetworkBody& body, const EngineConfig& config, const Dataset& data, MetricsLog* log) {
  if (config.pretrain_epochs == 0) return;
  BatchStream batches(data.train, config.batch_size, make_stream(config.seed, Stream::kPretrainShuffle));
  std::vector<Tensor> params;
  for (std::size_t l = 0; l < body.params().size(); ++l) {
    const auto& p = body.params()[l];
    for (const auto* t : {&p.weight, &p.bias, &p.gamma, &p.beta}) {
      if (t->defined()) params.push_back(*t);
    }
  }
  Adam opt(params, AdamOptions{config.pretrain_lr});
  const long total = static_cast<long>(config.pretrain_epochs * batches.batches_per_epoch());
  long step = 0;
  for (int e = 0; e < config.pretrain_epochs; ++e) {
    double loss_sum = 0.0;
    const auto epoch = batches.epoch();
    for (const auto& idx : epoch) {
      opt.set_lr(cosine_lr(config.pretrain_lr, step++, total));
      const Tensor loss = ops::cross_entropy(body.forward(data.batch(idx), ForwardMode::kTrain, full_precision),
                                             data.labels_of(idx));
      backward(loss);
      clip_grad_norm(params, config.grad_clip);
      opt.step();
      loss_sum += loss.item();
    }
    if (log) {
      MetricsRow r;
      r.epoch = e;
      r.phase = "pretrain";
      r.iter = static_cast<long>(epoch.size());
      r.task_loss = loss_sum / static_cast<double>(epoch.size());
      log->append(std::move(r));
    }
  }
  zero_grads(params);
}

// ---------------------------------------------------------------- search

RunState make_run_state(NetworkBody pretrained, const EngineConfig& config, const Dataset& data,
                        MetricsLog* log) {
  config.validate();
  RunState s;
  s.split = split(data, config.split_fraction, config.seed);
  s.net = Supernet::expand(std::move(pretrained), config.supernet);
  init_quantizers(s.net.body(), config, data, s.split.sub_train);
  std::vector<std::size_t> counts;
  std::vector<Tensor> logits;
  for (std::size_t c = 0; c < s.net.cell_count(); ++c) {
    counts.push_back(s.net.cell(c).candidate_count());
    logits.push_back(s.net.cell(c).logits());
  }
  s.decisions = DecisionState(counts);
  s.cell_decided_epoch.assign(counts.size(), -1);
  s.gumbel_rng = make_stream(config.seed, Stream::kGumbel);
  s.decision_rng = make_stream(config.seed, Stream::kDecision);
  s.train_batches.emplace(s.split.sub_train, config.batch_size, make_stream(config.seed, Stream::kShuffle));
  s.val_batches.emplace(s.split.validation, config.batch_size, make_stream(config.seed, Stream::kValidation));
  s.weight_opt = Sgd(s.net.weight_params(), config.weight_lr, config.weight_momentum, config.weight_decay);
  s.arch_opt = Adam(logits, AdamOptions{config.arch_lr});
  s.log = log;
  return s;
}

std::pair<Tensor, Tensor> sampled_bit_metrics(const Supernet& net, const ForwardResult& fr,
                                              bool include_fixed_layers) {
  const auto& body = net.body();
  BitAssignment bits;
  for (std::size_t q = 0; q < body.quant_layers().size(); ++q) {
    const auto& cost = body.costs()[body.quant_layers()[q]];
    LayerBits lb;
    lb.num = static_cast<double>(cost.num_params);
    lb.flops = static_cast<double>(cost.flops);
    if (net.is_endpoint(q)) {
      if (!include_fixed_layers) continue;
      lb.weight_bit = Tensor::scalar(net.options().endpoint_bits);
      lb.activation_bit = Tensor::scalar(net.options().endpoint_bits);
    } else {
      const auto& s = fr.samples.at(q - 1);
      lb.weight_bit = s.weight_bit;
      lb.activation_bit = s.activation_bit;
    }
    bits.push_back(std::move(lb));
  }
  return {avg_weight_bits(bits), avg_op_bits(bits)};
}

namespace {

std::vector<Tensor> undecided_logits(Supernet& net) { return net.arch_params(); }

[[noreturn]] void numeric_abort(const RunState& s, const char* phase, double tau, const NumericError& e) {
  std::ostringstream msg;
  msg << "numeric failure in " << phase << " step at epoch " << s.epoch << ", iteration " << s.iteration
      << ", tau " << tau << ": " << e.what();
  std::cerr << "error: " << msg.str() << "\nstate dump:\n";
  const auto& body = s.net.body();
  for (std::size_t q = 0; q < body.quant_layers().size(); ++q) {
    const auto& p = body.quant_params(q);
    std::cerr << "  layer " << body.seed().layers[body.quant_layers()[q]].name
              << " w_threshold=" << p.w_threshold.item() << " a_threshold=" << p.a_threshold.item() << "\n";
  }
  for (std::size_t c = 0; c < s.net.cell_count(); ++c) {
    const auto& cell = s.net.cell(c);
    std::cerr << "  cell " << c << (cell.decided() ? " decided" : " logits");
    if (!cell.decided()) {
      for (double v : cell.logits().data()) std::cerr << " " << v;
    }
    std::cerr << "\n";
  }
  throw NumericError(msg.str());
}

}  // namespace

StepStats weight_step(RunState& state, const EngineConfig& config, const Tensor& batch,
                      const std::vector<int>& labels, double tau) {
  StepStats st;
  try {
    GradFreeze freeze(undecided_logits(state.net));
    const auto fr = state.net.forward(batch, tau, state.gumbel_rng, ForwardMode::kTrain);
    const Tensor loss = ops::cross_entropy(fr.logits, labels);
    const auto [e_wb, e_ab] = sampled_bit_metrics(state.net, fr, config.include_fixed_layers);
    backward(loss);
    auto params = state.net.weight_params();
    st.grad_norm = clip_grad_norm(params, config.grad_clip);
    state.weight_opt.step();
    clamp_thresholds(state.net.body());
    st.task_loss = loss.item();
    st.e_wb = e_wb.item();
    st.e_ab = e_ab.item();
  } catch (const NumericError& e) {
    numeric_abort(state, "weight", tau, e);
  }
  return st;
}

StepStats arch_step(RunState& state, const EngineConfig& config, const Tensor& batch,
                    const std::vector<int>& labels, double tau) {
  StepStats st;
  try {
    GradFreeze freeze(state.net.weight_params());
    const auto fr = state.net.forward(batch, tau, state.gumbel_rng, ForwardMode::kTrainFrozen);
    const Tensor task = ops::cross_entropy(fr.logits, labels);
    const auto [e_wb, e_ab] = sampled_bit_metrics(state.net, fr, config.include_fixed_layers);
    const Tensor lj = constraint_loss(e_wb, e_ab, config.targets);
    st.task_loss = task.item();
    st.l_j = lj.item();
    st.e_wb = e_wb.item();
    st.e_ab = e_ab.item();
    auto logits = undecided_logits(state.net);
    if (logits.empty()) return st;
    const Tensor total =
        config.targets.lambda == 0.0 ? task : ops::add(task, ops::scale(lj, config.targets.lambda));
    backward(total);
    st.grad_norm = clip_grad_norm(logits, config.grad_clip);
    state.arch_opt.step();
  } catch (const NumericError& e) {
    numeric_abort(state, "arch", tau, e);
  }
  return st;
}

namespace {

std::vector<Tensor> all_logits(const Supernet& net) {
  std::vector<Tensor> out;
  for (std::size_t c = 0; c < net.cell_count(); ++c) out.push_back(net.cell(c).logits());
  return out;
}

void apply_decision(RunState& state, const DecisionEvent& ev) {
  state.net.cell(ev.cell_id).decide(ev.index);
  state.cell_decided_epoch[ev.cell_id] = ev.epoch;
  const std::size_t layer = state.net.layer_of_cell(ev.cell_id);
  const std::size_t per = state.net.cells_per_layer();
  bool done = true;
  for (std::size_t k = 0; k < per; ++k) done = done && state.net.cell(layer * per + k).decided();
  if (done) state.layer_decision_order.emplace_back(layer, ev.epoch);
  if (state.log) {
    MetricsRow r;
    r.epoch = ev.epoch;
    r.phase = "decision";
    r.iter = state.iteration;
    const SearchCell& cell = state.net.cell(ev.cell_id);
    r.event = "decide:";
    if (int w = cell.weight_bits(ev.index)) r.event += "w" + std::to_string(w);
    if (int a = cell.activation_bits(ev.index)) r.event += "a" + std::to_string(a);
    r.cell_id = static_cast<long>(ev.cell_id);
    r.entropy = ev.entropy;
    r.space_log10 = ev.space_log10;
    state.log->append(std::move(r));
  }
}

std::optional<DecisionEvent> decide_one(RunState& state, const EngineConfig& config, int epoch) {
  const auto logits = all_logits(state.net);
  auto ev = decide(state.decisions, logits, epoch, config.decision_rule, &state.decision_rng);
  if (ev) apply_decision(state, *ev);
  return ev;
}

}  // namespace

std::vector<DecisionEvent> run_decisions(RunState& state, const EngineConfig& config, int epoch) {
  std::vector<DecisionEvent> events;
  if (!config.decisions) return events;
  const auto sched = config.schedule();
  if (epoch < sched.warmup_epochs) return events;
  if (config.early_decide) {
    while (!state.decisions.undecided().empty()) {
      bool any = false;
      for (auto c : state.decisions.undecided()) {
        const double m = static_cast<double>(state.decisions.candidate_count(c));
        if (cell_entropy(state.net.cell(c).logits()) < config.early_fraction * std::log(m)) any = true;
      }
      if (!any) break;
      if (auto ev = decide_one(state, config, epoch)) events.push_back(*ev);
    }
  }
  const std::size_t quota = sched.quota_after(epoch, state.decisions.cell_count());
  while (state.decisions.decided().size() < quota) {
    auto ev = decide_one(state, config, epoch);
    if (!ev) break;
    events.push_back(*ev);
  }
  return events;
}

std::vector<DecisionEvent> force_decisions(RunState& state, const EngineConfig& config, int epoch) {
  std::vector<DecisionEvent> events;
  while (!state.decisions.undecided().empty()) {
    if (auto ev = decide_one(state, config, epoch)) events.push_back(*ev);
  }
  return events;
}

namespace {

void log_step(RunState& s, const EngineConfig& config, const char* phase, const StepStats& st, double tau,
              bool with_lj) {
  if (!s.log || s.iteration % config.log_interval != 0) return;
  MetricsRow r;
  r.epoch = s.epoch;
  r.phase = phase;
  r.iter = s.iteration;
  r.task_loss = st.task_loss;
  if (with_lj) r.l_j = st.l_j;
  r.e_wb = st.e_wb;
  r.e_ab = st.e_ab;
  r.tau = tau;
  s.log->append(std::move(r));
}

// Temperature is annealed from the first epoch with architecture updates.
double search_tau(const EngineConfig& config, int epoch) {
  return temperature(std::max(0, epoch - config.warmup_epochs), config.temperature);
}

void run_epoch(RunState& s, const EngineConfig& config, const Dataset& data, bool arch) {
  const double tau = search_tau(config, s.epoch);
  for (const auto& idx : s.train_batches->epoch()) {
    const auto ws = weight_step(s, config, data.batch(idx), data.labels_of(idx), tau);
    log_step(s, config, arch ? "weight" : "warmup", ws, tau, false);
    if (arch) {
      const auto vidx = s.val_batches->next();
      const auto as = arch_step(s, config, data.batch(vidx), data.labels_of(vidx), tau);
      log_step(s, config, "arch", as, tau, true);
    }
    ++s.iteration;
  }
}

void log_epoch_end(RunState& s, SearchReport& report) {
  const auto rows = entropy_log(s.decisions, all_logits(s.net), s.epoch);
  for (const auto& e : rows) {
    report.entropies.push_back(e);
    if (s.log) {
      MetricsRow r;
      r.epoch = s.epoch;
      r.phase = "entropy";
      r.iter = s.iteration;
      r.event = "entropy";
      r.cell_id = static_cast<long>(e.cell_id);
      r.entropy = e.entropy;
      s.log->append(std::move(r));
    }
  }
  const double space = s.decisions.remaining_space_log10();
  report.space_curve.push_back(space);
  if (s.log) {
    MetricsRow r;
    r.epoch = s.epoch;
    r.phase = "search";
    r.iter = s.iteration;
    r.event = "space";
    r.space_log10 = space;
    s.log->append(std::move(r));
  }
}

}  // namespace

void warmup(RunState& state, const EngineConfig& config, const Dataset& data) {
  while (state.epoch < config.warmup_epochs) {
    run_epoch(state, config, data, false);
    ++state.epoch;
  }
}

SearchResult search(const EngineConfig& config, const Dataset& data, MetricsLog* log,
                    const NetworkBody* pretrained) {
  config.validate();
  NetworkBody body;
  if (pretrained) {
    body = pretrained->clone();
  } else {
    body = build_body(config, data);
    pretrain(body, config, data, log);
  }
  SearchResult res{SearchReport{}, make_run_state(std::move(body), config, data, log)};
  auto& s = res.state;
  auto& report = res.report;
  if (log) {
    MetricsRow r;
    r.epoch = 0;
    r.phase = "search";
    r.event = "init";
    r.space_log10 = s.decisions.remaining_space_log10();
    log->append(std::move(r));
  }
  for (s.epoch = 0; s.epoch < config.epochs; ++s.epoch) {
    s.net.reset_evaluations();
    const long it0 = s.iteration;
    run_epoch(s, config, data, s.epoch >= config.warmup_epochs);
    report.evaluations_per_epoch.push_back(s.net.evaluations());
    report.iterations_per_epoch.push_back(s.iteration - it0);
    for (const auto& ev : run_decisions(s, config, s.epoch)) report.decisions.push_back(ev);
    log_epoch_end(s, report);
  }
  if (!s.decisions.undecided().empty()) {
    std::cerr << "warning: " << s.decisions.undecided().size()
              << " cell(s) undecided at the end of the search; deciding them now\n";
    report.forced_final_decisions = true;
    s.epoch = config.epochs - 1;
    for (const auto& ev : force_decisions(s, config, s.epoch)) report.decisions.push_back(ev);
    report.space_curve.back() = s.decisions.remaining_space_log10();
  }
  std::vector<int> layer_epoch(s.net.searchable_count(), -1);
  for (std::size_t c = 0; c < s.net.cell_count(); ++c) {
    auto& e = layer_epoch[s.net.layer_of_cell(c)];
    e = std::max(e, s.cell_decided_epoch[c]);
  }
  report.policy = s.net.policy(layer_epoch, config.seed, config.include_fixed_layers);
  report.policy.decision_order = s.layer_decision_order;
  report.final_e_wb = report.policy.e_wb;
  report.final_e_ab = report.policy.e_ab;
  return res;
}

// ---------------------------------------------------------------- fine-tune

FinetuneReport finetune(FixedNet& net, const EngineConfig& config, const Dataset& data, MetricsLog* log) {
  FinetuneReport rep;
  rep.epochs = config.resolved_finetune_epochs();
  BatchStream batches(data.train, config.batch_size, make_stream(config.seed, Stream::kFinetuneShuffle));
  Sgd opt(net.weight_params(), config.finetune_lr, config.weight_momentum, config.weight_decay);
  auto params = net.weight_params();
  const long total = static_cast<long>(rep.epochs * batches.batches_per_epoch());
  long step = 0;
  for (int e = 0; e < rep.epochs; ++e) {
    double loss_sum = 0.0;
    const auto epoch = batches.epoch();
    for (const auto& idx : epoch) {
      opt.set_lr(cosine_lr(config.finetune_lr, step++, total));
      try {
        const Tensor loss = ops::cross_entropy(net.forward(data.batch(idx), ForwardMode::kTrain),
                                               data.labels_of(idx));
        backward(loss);
        clip_grad_norm(params, config.grad_clip);
        opt.step();
        clamp_thresholds(net.body());
        loss_sum += loss.item();
      } catch (const NumericError& err) {
        throw NumericError(std::string("numeric failure in fine-tune epoch ") + std::to_string(e) + ": " +
                           err.what());
      }
    }
    rep.final_train_loss = loss_sum / static_cast<double>(epoch.size());
    if (log) {
      MetricsRow r;
      r.epoch = e;
      r.phase = "finetune";
      r.iter = static_cast<long>(epoch.size());
      r.task_loss = rep.final_train_loss;
      log->append(std::move(r));
    }
  }
  const auto ev = evaluate(net, data, data.test, config.batch_size, config.threads);
  rep.test_accuracy = ev.accuracy;
  rep.test_loss = ev.loss;
  return rep;
}

}  // namespace ssps
