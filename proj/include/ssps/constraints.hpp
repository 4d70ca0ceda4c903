#pragma once

#include <span>
#include <vector>

#include "ssps/tensor.hpp"

namespace ssps {

// Target average weight bit (c1) and average operation bit (c2), and the
// weight of the constraint term in the architecture objective.
struct ConstraintTargets {
  double c1 = 3.0;
  double c2 = 3.0;
  double lambda = 0.05;

  // Throws ConfigError unless c1, c2 lie in [lo, hi] and lambda >= 0.
  void validate(double lo, double hi) const;
};

// Per-layer selected bits plus the layer's NUM and FLOP. Bits are scalar
// tensors: differentiable for undecided cells, constant once decided.
struct LayerBits {
  Tensor weight_bit;
  Tensor activation_bit;
  double num = 0.0;
  double flops = 0.0;
};
using BitAssignment = std::vector<LayerBits>;

// sum_i b_i NUM_i / sum_i NUM_i
Tensor avg_weight_bits(const BitAssignment& bits);
// sqrt(sum_i a_i b_i FLOP_i / sum_i FLOP_i)
Tensor avg_op_bits(const BitAssignment& bits);
// (e_wb - c1)^2 + (e_ab - c2)^2
Tensor constraint_loss(const Tensor& e_wb, const Tensor& e_ab, const ConstraintTargets& targets);

// Plain-number forms.
double avg_weight_bits(std::span<const double> b, std::span<const double> num);
double avg_op_bits(std::span<const double> a, std::span<const double> b,
                   std::span<const double> flops);
double constraint_loss(double e_wb, double e_ab, const ConstraintTargets& targets);

// 32 / E_wb: weight compression against a 32-bit float model.
double model_compression_ratio(std::span<const double> w_bits, std::span<const double> num);

}  // namespace ssps
