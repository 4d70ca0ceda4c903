#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "ssps/rng.hpp"
#include "ssps/tensor.hpp"

namespace ssps {

// Plain softmax of the logits: no noise, no temperature.
std::vector<double> cell_probabilities(const Tensor& logits);
std::vector<double> cell_probabilities(std::span<const double> logits);

// -sum P log P in nats.
double cell_entropy(const Tensor& logits);
double cell_entropy(std::span<const double> logits);

enum class DecisionRule { kArgmax, kSample };

// When decisions happen and how many cells each one fixes.
struct DecisionSchedule {
  int total_epochs = 30;
  int warmup_epochs = 6;
  int interval = 2;
  // All cells are decided by the end of epoch ceil(end_fraction * total) - 1.
  double end_fraction = 0.8;
  // Fix cells whose entropy drops below early_fraction * ln M ahead of schedule.
  bool early_decide = false;
  double early_fraction = 0.1;

  void validate() const;  // throws ConfigError
  // Epochs at whose end decisions run, ascending.
  std::vector<int> decision_epochs() const;
  // Cumulative number of cells that must be decided after `epoch` ends.
  std::size_t quota_after(int epoch, std::size_t cell_count) const;
};

struct CellDecision {
  int epoch = 0;
  std::size_t index = 0;
  double entropy = 0.0;
};

struct DecisionEvent {
  int epoch = 0;
  std::size_t cell_id = 0;
  std::size_t index = 0;
  double entropy = 0.0;
  double space_log10 = 0.0;  // remaining search space after this decision
};

class DecisionState {
 public:
  DecisionState() = default;
  explicit DecisionState(std::vector<std::size_t> candidate_counts);

  const std::set<std::size_t>& undecided() const { return undecided_; }
  const std::map<std::size_t, CellDecision>& decided() const { return decided_; }
  std::size_t cell_count() const { return counts_.size(); }
  std::size_t candidate_count(std::size_t cell) const { return counts_.at(cell); }

  // log10 of the product of candidate counts over undecided cells.
  double remaining_space_log10() const;

  void mark_decided(std::size_t cell, CellDecision d);

 private:
  std::vector<std::size_t> counts_;
  std::set<std::size_t> undecided_;
  std::map<std::size_t, CellDecision> decided_;
};

// Fixes the undecided cell with minimum entropy at its most probable
// candidate (lowest index on ties), or at a candidate drawn from its
// probabilities under kSample. Returns nullopt, with a warning on stderr, if
// nothing is left to decide.
std::optional<DecisionEvent> decide(DecisionState& state, std::span<const Tensor> all_logits,
                                    int epoch, DecisionRule rule = DecisionRule::kArgmax,
                                    Rng* rng = nullptr);

struct EntropyRecord {
  int epoch = 0;
  std::size_t cell_id = 0;
  double entropy = 0.0;
};

// One entropy row per cell; decided cells report 0.
std::vector<EntropyRecord> entropy_log(const DecisionState& state,
                                       std::span<const Tensor> all_logits, int epoch);

}  // namespace ssps
