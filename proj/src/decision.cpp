#include "ssps/decision.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "ssps/errors.hpp"
#include "ssps/search_cell.hpp"

namespace ssps {

std::vector<double> cell_probabilities(std::span<const double> logits) {
  if (logits.empty()) throw ContractError("cell_probabilities: empty logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (auto& v : p) v /= z;
  return p;
}

std::vector<double> cell_probabilities(const Tensor& logits) {
  return cell_probabilities(logits.data());
}

double cell_entropy(std::span<const double> logits) {
  double h = 0.0;
  for (double p : cell_probabilities(logits)) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

double cell_entropy(const Tensor& logits) { return cell_entropy(logits.data()); }

void DecisionSchedule::validate() const {
  if (total_epochs <= 0) throw ConfigError("decision schedule: epochs must be positive");
  if (warmup_epochs < 0 || warmup_epochs >= total_epochs) {
    throw ConfigError("decision schedule: warm-up must leave at least one search epoch");
  }
  if (interval <= 0) throw ConfigError("decision schedule: interval must be positive");
  if (!(end_fraction > 0.0 && end_fraction <= 1.0)) {
    throw ConfigError("decision schedule: end fraction must lie in (0, 1]");
  }
  if (!(early_fraction >= 0.0 && early_fraction < 1.0)) {
    throw ConfigError("decision schedule: early fraction must lie in [0, 1)");
  }
}

std::vector<int> DecisionSchedule::decision_epochs() const {
  validate();
  const int last = std::clamp(static_cast<int>(std::ceil(end_fraction * total_epochs)) - 1,
                              warmup_epochs, total_epochs - 1);
  std::vector<int> epochs;
  for (int e = warmup_epochs; e < last; ++e) {
    if ((e - warmup_epochs + 1) % interval == 0) epochs.push_back(e);
  }
  epochs.push_back(last);
  return epochs;
}

std::size_t DecisionSchedule::quota_after(int epoch, std::size_t cell_count) const {
  const auto epochs = decision_epochs();
  const auto done = static_cast<std::size_t>(
      std::upper_bound(epochs.begin(), epochs.end(), epoch) - epochs.begin());
  // Spread evenly; the last decision epoch always reaches the full count.
  return cell_count * done / epochs.size();
}

DecisionState::DecisionState(std::vector<std::size_t> candidate_counts)
    : counts_(std::move(candidate_counts)) {
  for (std::size_t i = 0; i < counts_.size(); ++i) undecided_.insert(i);
}

double DecisionState::remaining_space_log10() const {
  double s = 0.0;
  for (auto c : undecided_) s += std::log10(static_cast<double>(counts_[c]));
  return s;
}

void DecisionState::mark_decided(std::size_t cell, CellDecision d) {
  if (!undecided_.erase(cell)) throw ContractError("cell " + std::to_string(cell) + " already decided");
  decided_[cell] = d;
}

std::optional<DecisionEvent> decide(DecisionState& state, std::span<const Tensor> all_logits,
                                    int epoch, DecisionRule rule, Rng* rng) {
  if (all_logits.size() != state.cell_count()) {
    throw DimensionError("decide: logits count does not match cell count");
  }
  if (state.undecided().empty()) {
    std::cerr << "warning: decide called with no undecided cells\n";
    return std::nullopt;
  }
  std::size_t best = *state.undecided().begin();
  double best_h = cell_entropy(all_logits[best]);
  for (auto c : state.undecided()) {
    const double h = cell_entropy(all_logits[c]);
    if (h < best_h) {
      best = c;
      best_h = h;
    }
  }
  const auto probs = cell_probabilities(all_logits[best]);
  std::size_t index = argmax_lowest(probs);
  if (rule == DecisionRule::kSample) {
    if (!rng) throw ContractError("decide: sampling rule needs an rng");
    const double u = rng->uniform();
    double acc = 0.0;
    index = probs.size() - 1;
    for (std::size_t m = 0; m < probs.size(); ++m) {
      acc += probs[m];
      if (u < acc) {
        index = m;
        break;
      }
    }
  }
  state.mark_decided(best, {epoch, index, best_h});
  return DecisionEvent{epoch, best, index, best_h, state.remaining_space_log10()};
}

std::vector<EntropyRecord> entropy_log(const DecisionState& state,
                                       std::span<const Tensor> all_logits, int epoch) {
  if (all_logits.size() != state.cell_count()) {
    throw DimensionError("entropy_log: logits count does not match cell count");
  }
  std::vector<EntropyRecord> rows;
  for (std::size_t c = 0; c < all_logits.size(); ++c) {
    const bool done = state.decided().count(c) > 0;
    rows.push_back({epoch, c, done ? 0.0 : cell_entropy(all_logits[c])});
  }
  return rows;
}

}  // namespace ssps
