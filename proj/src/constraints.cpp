#include "ssps/constraints.hpp"

#include <cmath>

#include "ssps/errors.hpp"
#include "ssps/ops.hpp"

namespace ssps {

void ConstraintTargets::validate(double lo, double hi) const {
  if (!(c1 >= lo && c1 <= hi) || !(c2 >= lo && c2 <= hi)) {
    throw ConfigError("constraint targets must lie within [" + std::to_string(lo) + ", " +
                      std::to_string(hi) + "]");
  }
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
}

namespace {

void check_layers(const BitAssignment& bits, bool need_flops) {
  if (bits.empty()) throw ContractError("constraint metrics need at least one layer");
  for (const auto& l : bits) {
    if (!(need_flops ? l.flops > 0.0 : l.num > 0.0)) {
      throw ContractError("constraint metrics need positive layer counts");
    }
  }
}

}  // namespace

Tensor avg_weight_bits(const BitAssignment& bits) {
  check_layers(bits, false);
  double total = 0.0;
  for (const auto& l : bits) total += l.num;
  Tensor acc;
  for (const auto& l : bits) {
    const Tensor term = ops::scale(l.weight_bit, l.num / total);
    acc = acc.defined() ? ops::add(acc, term) : term;
  }
  return acc;
}

Tensor avg_op_bits(const BitAssignment& bits) {
  check_layers(bits, true);
  double total = 0.0;
  for (const auto& l : bits) total += l.flops;
  Tensor acc;
  for (const auto& l : bits) {
    const Tensor term = ops::scale(ops::mul(l.activation_bit, l.weight_bit), l.flops / total);
    acc = acc.defined() ? ops::add(acc, term) : term;
  }
  return ops::sqrt(acc);
}

Tensor constraint_loss(const Tensor& e_wb, const Tensor& e_ab, const ConstraintTargets& targets) {
  return ops::add(ops::square(ops::add_scalar(e_wb, -targets.c1)),
                  ops::square(ops::add_scalar(e_ab, -targets.c2)));
}

double avg_weight_bits(std::span<const double> b, std::span<const double> num) {
  if (b.empty()) throw ContractError("avg_weight_bits: empty layer list");
  if (b.size() != num.size()) throw DimensionError("avg_weight_bits: length mismatch");
  double s = 0.0, total = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (!(num[i] > 0.0)) throw ContractError("avg_weight_bits: NUM must be positive");
    s += b[i] * num[i];
    total += num[i];
  }
  return s / total;
}

double avg_op_bits(std::span<const double> a, std::span<const double> b,
                   std::span<const double> flops) {
  if (a.empty()) throw ContractError("avg_op_bits: empty layer list");
  if (a.size() != b.size() || a.size() != flops.size()) {
    throw DimensionError("avg_op_bits: length mismatch");
  }
  double s = 0.0, total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(flops[i] > 0.0)) throw ContractError("avg_op_bits: FLOP must be positive");
    s += a[i] * b[i] * flops[i];
    total += flops[i];
  }
  return std::sqrt(s / total);
}

double constraint_loss(double e_wb, double e_ab, const ConstraintTargets& targets) {
  const double dw = e_wb - targets.c1;
  const double da = e_ab - targets.c2;
  return dw * dw + da * da;
}

double model_compression_ratio(std::span<const double> w_bits, std::span<const double> num) {
  return 32.0 / avg_weight_bits(w_bits, num);
}

}  // namespace ssps
