#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ssps/network.hpp"
#include "ssps/search_cell.hpp"

namespace ssps {

struct SupernetOptions {
  SearchSpace weight_space = SearchSpace::default_space();
  SearchSpace activation_space = SearchSpace::default_space();
  bool combined_cells = true;
  EvalMode eval_mode = EvalMode::kSinglePath;
  // Bits of the first and last parameterized layers.
  int endpoint_bits = 8;
  double activation_threshold_init = 4.0;
  // Network inputs are scaled to [0, 1].
  double input_threshold_init = 1.0;
};

// Selection made for one searchable layer during a forward pass. The bit
// tensors are differentiable scalars for undecided cells and constants
// otherwise.
struct LayerSample {
  std::size_t layer = 0;  // searchable-layer index
  std::vector<PathSample> paths;  // one (combined) or two (weight, activation)
  int weight_bits = 0;
  int activation_bits = 0;
  Tensor weight_bit;
  Tensor activation_bit;
};

struct ForwardResult {
  Tensor logits;
  std::vector<LayerSample> samples;
};

struct LayerPolicy {
  std::string name;
  int w_bit = 32;
  int a_bit = 32;
  int decided_epoch = -1;
};

// Final bit assignment of the searchable layers, in layer order.
struct Policy {
  std::string model;
  std::vector<LayerPolicy> layers;
  double e_wb = 0.0;
  double e_ab = 0.0;
  std::uint64_t seed = 0;
  // (searchable layer index, epoch) in the order the decisions were made.
  std::vector<std::pair<std::size_t, int>> decision_order;

  static Policy uniform(const std::string& model, const std::vector<std::string>& layer_names,
                        int w_bit, int a_bit);
};

// (E_wb, E_ab) of a policy over the searchable layers of `body`, plus the
// endpoints at `endpoint_bits` when `include_fixed` is set.
std::pair<double, double> policy_bit_metrics(const NetworkBody& body, const Policy& policy,
                                             int endpoint_bits, bool include_fixed);

class Supernet {
 public:
  // Takes ownership of `body` (typically a pretrained full-precision model).
  // Weight thresholds start at max|W|, activation thresholds at the
  // configured values; all logits start at zero.
  static Supernet expand(NetworkBody body, const SupernetOptions& options);

  const NetworkBody& body() const { return body_; }
  NetworkBody& body() { return body_; }
  const SupernetOptions& options() const { return options_; }
  const std::string& model() const { return body_.seed().name; }

  std::size_t searchable_count() const { return searchable_.size(); }
  // Parameterized-layer index of searchable layer i.
  std::size_t quant_index(std::size_t i) const { return searchable_[i]; }
  const std::string& layer_name(std::size_t i) const;
  std::vector<std::string> layer_names() const;
  bool is_endpoint(std::size_t qidx) const;

  // Cells flattened: combined mode has one per searchable layer, separate
  // mode has (weight, activation) per layer.
  std::size_t cell_count() const { return cells_.size(); }
  SearchCell& cell(std::size_t id) { return cells_[id]; }
  const SearchCell& cell(std::size_t id) const { return cells_[id]; }
  std::size_t layer_of_cell(std::size_t id) const { return cells_per_layer() == 1 ? id : id / 2; }
  std::size_t cells_per_layer() const { return options_.combined_cells ? 1 : 2; }

  bool all_decided() const;
  // log10 of the product of candidate counts over undecided cells.
  double remaining_space_log10() const;

  ForwardResult forward(const Tensor& batch, double tau, Rng& rng, ForwardMode mode);

  // Network weights, biases, thresholds and norm parameters.
  std::vector<Tensor> weight_params() const { return body_.trainable(); }
  // Logits of undecided cells.
  std::vector<Tensor> arch_params();

  // Selected bits of a searchable layer given a cell-index assignment.
  std::pair<int, int> layer_bits(std::size_t layer, const std::vector<std::size_t>& cell_index) const;
  // Bits of every searchable layer once all cells are decided.
  std::vector<std::pair<int, int>> decided_bits() const;

  // Builds the policy from decided cells; throws ContractError if any remain.
  Policy policy(const std::vector<int>& decided_epoch, std::uint64_t seed, bool include_fixed) const;

  // Quantizer candidate evaluations since the last reset, over all cells.
  std::uint64_t evaluations() const;
  void reset_evaluations();

  // NUM and FLOP of searchable layer i.
  const LayerCost& cost(std::size_t i) const { return body_.costs()[body_.quant_layers()[searchable_[i]]]; }

 private:
  NetworkBody body_;
  SupernetOptions options_;
  std::vector<std::size_t> searchable_;  // parameterized-layer indices
  std::vector<SearchCell> cells_;
};

// Fixed mixed-precision network with no architecture parameters.
class FixedNet {
 public:
  FixedNet(NetworkBody body, std::vector<std::pair<int, int>> bits);

  // Cells replaced by fixed quantizers at the policy's bits. Weights and
  // thresholds are copied. Throws ContractError on an incomplete policy.
  static FixedNet materialize(const Supernet& net, const Policy& policy);
  // Same from a bare body: the first and last parameterized layers take
  // `endpoint_bits`, the rest follow the policy in order.
  static FixedNet from_policy(NetworkBody body, const Policy& policy, int endpoint_bits);
  // All layers at `bits` (e.g. 32 for a full-precision network).
  static FixedNet uniform(NetworkBody body, int bits);

  Tensor forward(const Tensor& batch, ForwardMode mode);
  std::vector<Tensor> weight_params() const { return body_.trainable(); }
  const NetworkBody& body() const { return body_; }
  NetworkBody& body() { return body_; }
  // (weight, activation) bits per parameterized layer.
  const std::vector<std::pair<int, int>>& bits() const { return bits_; }
  std::size_t arch_param_count() const { return 0; }

 private:
  NetworkBody body_;
  std::vector<std::pair<int, int>> bits_;
};

// Sets weight thresholds to max|W| and activation thresholds to the given
// initial values.
void init_thresholds(NetworkBody& body, double activation_init, double input_init);

// Sets each activation threshold to the given percentile (in [0, 100]) of
// its layer's full-precision input on `batch`.
void calibrate_activation_thresholds(NetworkBody& body, const Tensor& batch, double percentile);

}  // namespace ssps
