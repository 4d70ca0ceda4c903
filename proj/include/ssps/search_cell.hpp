#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "ssps/quantizer.hpp"
#include "ssps/rng.hpp"
#include "ssps/tensor.hpp"

namespace ssps {

// Ordered candidate bit-widths of a search cell.
class SearchSpace {
 public:
  SearchSpace() : SearchSpace(default_space()) {}
  explicit SearchSpace(std::vector<int> bits);  // strictly increasing, >= 2 entries

  static SearchSpace default_space() { return SearchSpace(std::vector<int>{2, 3, 4, 5, 6}); }

  std::size_t size() const { return bits_.size(); }
  int operator[](std::size_t i) const { return bits_.at(i); }
  const std::vector<int>& bits() const { return bits_; }
  int min_bits() const { return bits_.front(); }
  int max_bits() const { return bits_.back(); }

  friend bool operator==(const SearchSpace&, const SearchSpace&) = default;

 private:
  std::vector<int> bits_;
};

// Exponential temperature decay with a floor.
struct TempSchedule {
  double initial = 5.0;
  double rate = 0.95;
  double floor = 0.5;

  void validate() const;  // throws ConfigError
};

// max(floor, initial * rate^epoch)
double temperature(int epoch, const TempSchedule& schedule);

// -log(-log(u)) with u clamped to [1e-12, 1 - 1e-12].
double gumbel_from_uniform(double u);
double gumbel_noise(Rng& rng);

// One draw of the relaxed categorical selection.
struct PathSample {
  Tensor g;               // soft probabilities (grad flows to logits); undefined when decided
  std::vector<double> h;  // one-hot at argmax(g)
  Tensor h_st;            // forward h, backward straight to g; undefined when decided
  std::size_t index = 0;
};

// Argmax with the lowest index winning ties.
std::size_t argmax_lowest(std::span<const double> values);

// g = softmax((logits + noise) / tau), h = one_hot(argmax g).
PathSample sample_with_noise(const Tensor& logits, double tau, std::span<const double> noise);
// Same with fresh Gumbel noise from rng.
PathSample sample(const Tensor& logits, double tau, Rng& rng);

enum class CellKind { kWeight, kActivation, kCombined };

// kSinglePath evaluates only the sampled candidate; kAllCandidates evaluates
// every candidate and sums them under the one-hot mask (comparison mode).
enum class EvalMode { kSinglePath, kAllCandidates };

// Bit-width search cell. A weight or activation cell selects one bit-width
// from its space; a combined cell selects a (weight, activation) pair from
// the product of two spaces, indexed as i_w * |aspace| + i_a.
class SearchCell {
 public:
  SearchCell(CellKind kind, SearchSpace wspace, SearchSpace aspace);

  CellKind kind() const { return kind_; }
  std::size_t candidate_count() const;
  const SearchSpace& weight_space() const { return wspace_; }
  const SearchSpace& activation_space() const { return aspace_; }

  // Bits of candidate `index` on each side; 0 when the cell does not
  // control that side.
  int weight_bits(std::size_t index) const;
  int activation_bits(std::size_t index) const;

  Tensor& logits() { return logits_; }
  const Tensor& logits() const { return logits_; }

  bool decided() const { return decided_.has_value(); }
  std::optional<std::size_t> decided_index() const { return decided_; }
  // Freezes the cell at a candidate; logits stop receiving gradient.
  void decide(std::size_t index);

  // Fresh sample, or the fixed path for a decided cell (no noise consumed).
  PathSample draw(double tau, Rng& rng) const;

  std::uint64_t evaluations() const { return evaluations_; }
  void reset_evaluations() { evaluations_ = 0; }
  void count_evaluations(std::uint64_t n) const { evaluations_ += n; }

 private:
  CellKind kind_;
  SearchSpace wspace_, aspace_;
  Tensor logits_;
  std::optional<std::size_t> decided_;
  mutable std::uint64_t evaluations_ = 0;
};

// (weight_bit, activation_bit) of combined index i_w * |aspace| + i_a.
std::pair<int, int> combined_cell_decode(std::size_t index, const SearchSpace& wspace,
                                         const SearchSpace& aspace);

enum class QuantTarget { kWeights, kActivations };

// Quantizes x with the candidate picked by `sample`, using the weight or
// activation quantizer. In single-path mode exactly one candidate is
// evaluated and the result is scaled by h_st[index] (value 1) so the task
// loss reaches the logits. Decided cells evaluate their fixed candidate with
// no path to the logits.
Tensor apply_cell(const Tensor& x, const SearchCell& cell, const PathSample& sample,
                  const Tensor& t, QuantTarget target, EvalMode mode = EvalMode::kSinglePath);

// Draw plus apply for a single-kind cell.
std::pair<Tensor, PathSample> cell_forward(const Tensor& x, const SearchCell& cell, double tau,
                                           const Tensor& t, Rng& rng,
                                           EvalMode mode = EvalMode::kSinglePath);

}  // namespace ssps
