#include "ssps/search_cell.hpp"

#include <algorithm>
#include <cmath>

#include "ssps/errors.hpp"
#include "ssps/ops.hpp"

namespace ssps {

SearchSpace::SearchSpace(std::vector<int> bits) : bits_(std::move(bits)) {
  if (bits_.size() < 2) throw ConfigError("search space needs at least two candidates");
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (!BitWidth::valid(bits_[i])) {
      throw ConfigError("search space contains invalid bit-width " + std::to_string(bits_[i]));
    }
    if (i > 0 && bits_[i] <= bits_[i - 1]) {
      throw ConfigError("search space must be strictly increasing");
    }
  }
}

void TempSchedule::validate() const {
  if (!(initial > 0.0)) throw ConfigError("temperature: initial value must be positive");
  if (!(rate > 0.0 && rate <= 1.0)) throw ConfigError("temperature: decay rate must lie in (0, 1]");
  if (!(floor > 0.0)) throw ConfigError("temperature: floor must be positive");
}

double temperature(int epoch, const TempSchedule& schedule) {
  schedule.validate();
  if (epoch < 0) throw ContractError("temperature: negative epoch");
  return std::max(schedule.floor, schedule.initial * std::pow(schedule.rate, epoch));
}

double gumbel_from_uniform(double u) {
  u = std::clamp(u, 1e-12, 1.0 - 1e-12);
  return -std::log(-std::log(u));
}

double gumbel_noise(Rng& rng) { return gumbel_from_uniform(rng.uniform()); }

std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

PathSample sample_with_noise(const Tensor& logits, double tau, std::span<const double> noise) {
  if (!(tau > 0.0)) throw ContractError("sample: temperature must be positive");
  if (noise.size() != logits.numel()) throw DimensionError("sample: noise length mismatch");
  const auto o = Tensor::from(logits.shape(), std::vector<double>(noise.begin(), noise.end()));
  PathSample s;
  s.g = ops::softmax(ops::scale(ops::add(logits, o), 1.0 / tau));
  s.index = argmax_lowest(s.g.data());
  s.h.assign(logits.numel(), 0.0);
  s.h[s.index] = 1.0;
  s.h_st = ops::straight_through(s.h, s.g);
  return s;
}

PathSample sample(const Tensor& logits, double tau, Rng& rng) {
  std::vector<double> noise(logits.numel());
  for (auto& o : noise) o = gumbel_noise(rng);
  return sample_with_noise(logits, tau, noise);
}

SearchCell::SearchCell(CellKind kind, SearchSpace wspace, SearchSpace aspace)
    : kind_(kind), wspace_(std::move(wspace)), aspace_(std::move(aspace)) {
  logits_ = Tensor::zeros({candidate_count()}, true);
}

std::size_t SearchCell::candidate_count() const {
  switch (kind_) {
    case CellKind::kWeight:
      return wspace_.size();
    case CellKind::kActivation:
      return aspace_.size();
    case CellKind::kCombined:
      return wspace_.size() * aspace_.size();
  }
  return 0;
}

int SearchCell::weight_bits(std::size_t index) const {
  if (index >= candidate_count()) throw ContractError("candidate index out of range");
  switch (kind_) {
    case CellKind::kWeight:
      return wspace_[index];
    case CellKind::kActivation:
      return 0;
    case CellKind::kCombined:
      return combined_cell_decode(index, wspace_, aspace_).first;
  }
  return 0;
}

int SearchCell::activation_bits(std::size_t index) const {
  if (index >= candidate_count()) throw ContractError("candidate index out of range");
  switch (kind_) {
    case CellKind::kWeight:
      return 0;
    case CellKind::kActivation:
      return aspace_[index];
    case CellKind::kCombined:
      return combined_cell_decode(index, wspace_, aspace_).second;
  }
  return 0;
}

void SearchCell::decide(std::size_t index) {
  if (index >= candidate_count()) throw ContractError("decide: candidate index out of range");
  decided_ = index;
  logits_.set_requires_grad(false);
  logits_.zero_grad();
}

PathSample SearchCell::draw(double tau, Rng& rng) const {
  if (decided_) {
    PathSample s;
    s.index = *decided_;
    s.h.assign(candidate_count(), 0.0);
    s.h[s.index] = 1.0;
    return s;
  }
  return sample(logits_, tau, rng);
}

std::pair<int, int> combined_cell_decode(std::size_t index, const SearchSpace& wspace,
                                         const SearchSpace& aspace) {
  if (index >= wspace.size() * aspace.size()) {
    throw ContractError("combined index " + std::to_string(index) + " out of range");
  }
  return {wspace[index / aspace.size()], aspace[index % aspace.size()]};
}

namespace {

Tensor quantize_as(const Tensor& x, int bits, const Tensor& t, QuantTarget target) {
  return target == QuantTarget::kWeights ? quantize_weights(x, BitWidth(bits), t)
                                         : quantize_activations(x, BitWidth(bits), t);
}

int bits_for(const SearchCell& cell, std::size_t index, QuantTarget target) {
  const int bits = target == QuantTarget::kWeights ? cell.weight_bits(index)
                                                   : cell.activation_bits(index);
  if (bits == 0) throw ContractError("cell does not control this quantization target");
  return bits;
}

}  // namespace

Tensor apply_cell(const Tensor& x, const SearchCell& cell, const PathSample& sample,
                  const Tensor& t, QuantTarget target, EvalMode mode) {
  // A combined candidate covers both sides of the pair; count it once.
  const bool counts = cell.kind() != CellKind::kCombined || target == QuantTarget::kWeights;
  if (!sample.h_st.defined()) {
    if (counts) cell.count_evaluations(1);
    return quantize_as(x, bits_for(cell, sample.index, target), t, target);
  }
  if (mode == EvalMode::kSinglePath) {
    if (counts) cell.count_evaluations(1);
    const Tensor q = quantize_as(x, bits_for(cell, sample.index, target), t, target);
    return ops::mul(ops::select(sample.h_st, sample.index), q);
  }
  const std::size_t M = cell.candidate_count();
  if (counts) cell.count_evaluations(M);
  Tensor acc;
  for (std::size_t m = 0; m < M; ++m) {
    const Tensor term =
        ops::mul(ops::select(sample.h_st, m), quantize_as(x, bits_for(cell, m, target), t, target));
    acc = acc.defined() ? ops::add(acc, term) : term;
  }
  return acc;
}

std::pair<Tensor, PathSample> cell_forward(const Tensor& x, const SearchCell& cell, double tau,
                                           const Tensor& t, Rng& rng, EvalMode mode) {
  if (cell.kind() == CellKind::kCombined) {
    throw ContractError("cell_forward: combined cells are applied per layer");
  }
  PathSample s = cell.draw(tau, rng);
  const auto target =
      cell.kind() == CellKind::kWeight ? QuantTarget::kWeights : QuantTarget::kActivations;
  Tensor out = apply_cell(x, cell, s, t, target, mode);
  return {std::move(out), std::move(s)};
}

}  // namespace ssps
