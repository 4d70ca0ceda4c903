#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssps/constraints.hpp"
#include "ssps/data.hpp"
#include "ssps/decision.hpp"
#include "ssps/metrics.hpp"
#include "ssps/optim.hpp"
#include "ssps/supernet.hpp"

namespace ssps {

struct EngineConfig {
  std::uint64_t seed = 0;
  std::string model = "mlp3";

  int epochs = 60;  // search epochs, warm-up included
  int warmup_epochs = 12;
  std::size_t batch_size = 16;

  double weight_lr = 1e-3;
  double weight_momentum = 0.9;
  double weight_decay = 1e-4;
  double arch_lr = 3e-3;
  double grad_clip = 5.0;

  ConstraintTargets targets;
  TempSchedule temperature;

  bool decisions = true;  // false runs the no-decision ablation
  DecisionRule decision_rule = DecisionRule::kArgmax;
  int decision_interval = 2;
  double decision_end_fraction = 0.8;
  bool early_decide = false;
  double early_fraction = 0.1;
  bool include_fixed_layers = false;

  double split_fraction = 0.5;  // share of the train split used for weights

  // Full-precision training of the seed before expansion (Adam).
  int pretrain_epochs = 150;
  double pretrain_lr = 1e-2;

  int finetune_epochs = 0;  // 0 means 3 * epochs
  double finetune_lr = 1e-3;

  // Activation thresholds start at a percentile of the pretrained
  // activations; otherwise at the supernet options' fixed values.
  bool calibrate_thresholds = true;
  double calibration_percentile = 99.9;
  std::size_t calibration_samples = 512;

  SupernetOptions supernet;
  int threads = 1;  // evaluation threads
  int log_interval = 1;  // iterations between per-step metrics rows

  void validate() const;  // throws ConfigError
  DecisionSchedule schedule() const;
  int resolved_finetune_epochs() const { return finetune_epochs > 0 ? finetune_epochs : 3 * epochs; }
};

// Independent substream ids derived from EngineConfig::seed.
enum class Stream : std::uint64_t {
  kInit = 1,
  kPretrainShuffle,
  kShuffle,
  kValidation,
  kGumbel,
  kDecision,
  kFinetuneShuffle,
};
Rng make_stream(std::uint64_t seed, Stream s);

// Mini-batch order over a fixed index set, reshuffled every epoch from its
// own stream.
class BatchStream {
 public:
  BatchStream(std::vector<std::size_t> indices, std::size_t batch_size, Rng rng);
  // Batches of one epoch; the last may be short.
  std::vector<std::vector<std::size_t>> epoch();
  // Next batch, wrapping to a fresh epoch when exhausted.
  std::vector<std::size_t> next();
  std::size_t batches_per_epoch() const;

 private:
  std::vector<std::size_t> indices_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::vector<std::size_t>> pending_;
  std::size_t cursor_ = 0;
};

struct Evaluation {
  double accuracy = 0.0;
  double loss = 0.0;
  std::size_t samples = 0;
};

// Accuracy of row-wise argmax (lowest index on ties) against labels.
double accuracy_from_logits(const Tensor& logits, std::span<const int> labels);

using ForwardFn = std::function<Tensor(const Tensor& batch)>;

// Mean cross-entropy and accuracy over `indices`. Batches may be spread
// over `threads` workers; per-batch results are combined in batch order.
Evaluation evaluate(const ForwardFn& forward, const Dataset& data, std::span<const std::size_t> indices,
                    std::size_t batch_size, int threads = 1);
Evaluation evaluate(FixedNet& net, const Dataset& data, std::span<const std::size_t> indices,
                    std::size_t batch_size, int threads = 1);

// Randomly initialised seed network for the dataset.
NetworkBody build_body(const EngineConfig& config, const Dataset& data);

// Threshold initialization shared by the supernet and fixed baselines:
// weights at max|W|, activations calibrated on the first samples of
// `indices` (or fixed values when calibration is off).
void init_quantizers(NetworkBody& body, const EngineConfig& config, const Dataset& data,
                     std::span<const std::size_t> indices);

// Full-precision training of `body` on the train split.
void pretrain(NetworkBody& body, const EngineConfig& config, const Dataset& data, MetricsLog* log);

struct StepStats {
  double task_loss = 0.0;
  double l_j = 0.0;
  double e_wb = 0.0;
  double e_ab = 0.0;
  double grad_norm = 0.0;
};

// Mutable search state.
struct RunState {
  Supernet net;
  DecisionState decisions;
  int epoch = 0;
  long iteration = 0;
  SplitIndices split;
  Rng gumbel_rng;
  Rng decision_rng;
  std::optional<BatchStream> train_batches;
  std::optional<BatchStream> val_batches;
  Sgd weight_opt;
  Adam arch_opt;
  std::vector<int> cell_decided_epoch;
  std::vector<std::pair<std::size_t, int>> layer_decision_order;
  MetricsLog* log = nullptr;
};

// Expands a pretrained body into a supernet and prepares optimizers, data
// streams and decision bookkeeping.
RunState make_run_state(NetworkBody pretrained, const EngineConfig& config, const Dataset& data,
                        MetricsLog* log);

// Sampled E_wb / E_ab tensors for a forward result, following the config's
// fixed-layer inclusion rule.
std::pair<Tensor, Tensor> sampled_bit_metrics(const Supernet& net, const ForwardResult& fr,
                                              bool include_fixed_layers);

// One weight step on a sub-training batch: W, biases, thresholds and norm
// parameters move, logits do not.
StepStats weight_step(RunState& state, const EngineConfig& config, const Tensor& batch,
                      const std::vector<int>& labels, double tau);
// One architecture step on a validation batch: loss = task + lambda * L_J
// moves the undecided logits only.
StepStats arch_step(RunState& state, const EngineConfig& config, const Tensor& batch,
                    const std::vector<int>& labels, double tau);

// Runs the decisions due at the end of `epoch`.
std::vector<DecisionEvent> run_decisions(RunState& state, const EngineConfig& config, int epoch);

// Decides every remaining cell.
std::vector<DecisionEvent> force_decisions(RunState& state, const EngineConfig& config, int epoch);

struct SearchReport {
  Policy policy;
  double final_e_wb = 0.0;
  double final_e_ab = 0.0;
  std::vector<DecisionEvent> decisions;
  std::vector<EntropyRecord> entropies;
  std::vector<double> space_curve;  // remaining log10 space after each epoch
  std::vector<std::uint64_t> evaluations_per_epoch;
  std::vector<long> iterations_per_epoch;
  bool forced_final_decisions = false;
};

struct SearchResult {
  SearchReport report;
  RunState state;
};

// Pretrains (unless `pretrained` is given), expands and searches. The
// warm-up prefix updates weights only.
SearchResult search(const EngineConfig& config, const Dataset& data, MetricsLog* log,
                    const NetworkBody* pretrained = nullptr);

// Warm-up epochs only; logits stay untouched.
void warmup(RunState& state, const EngineConfig& config, const Dataset& data);

struct FinetuneReport {
  double test_accuracy = 0.0;
  double test_loss = 0.0;
  double final_train_loss = 0.0;
  int epochs = 0;
};

// Trains all weights and thresholds of `net` on the full train split with
// SGD under cosine learning-rate decay, then evaluates on the test split.
FinetuneReport finetune(FixedNet& net, const EngineConfig& config, const Dataset& data, MetricsLog* log);

}  // namespace ssps
