#pragma once

#include <vector>

#include "ssps/tensor.hpp"

namespace ssps {

// Bit count of a quantizer. 16 and 32 mean floating pass-through.
class BitWidth {
 public:
  BitWidth() = default;
  explicit BitWidth(int bits);  // throws ContractError outside {1..8, 16, 32}

  int bits() const { return bits_; }
  bool is_float() const { return bits_ >= 16; }
  static bool valid(int bits) { return (bits >= 1 && bits <= 8) || bits == 16 || bits == 32; }

  friend bool operator==(BitWidth a, BitWidth b) { return a.bits_ == b.bits_; }
  friend auto operator<=>(BitWidth a, BitWidth b) { return a.bits_ <=> b.bits_; }

 private:
  int bits_ = 32;
};

// Smallest value a learned threshold may take after an optimizer step.
inline constexpr double kMinThreshold = 1e-3;

// Signed symmetric quantizer with learned clamp scale t:
//   round(clamp(w / t, -1, 1) * (2^(n-1) - 1)) * t / (2^(n-1) - 1).
// n = 1 is the sign quantizer {-t, +t}. Rounding is half away from zero.
// Backward: straight-through inside [-t, t]; saturated entries send their
// gradient to t with the sign of the saturation.
// `t` must be a one-element tensor holding a positive value.
Tensor quantize_weights(const Tensor& w, BitWidth n, const Tensor& t);

// Unsigned quantizer for post-ReLU activations:
//   round(clamp(x / t, 0, 1) * (2^m - 1)) * t / (2^m - 1).
// Backward: straight-through inside [0, t], entries above t route their
// gradient to t, entries below 0 get none.
Tensor quantize_activations(const Tensor& x, BitWidth m, const Tensor& t);

// Scalar forms of the two quantizers, used by tests and oracles.
double quantize_weight_value(double w, int bits, double t);
double quantize_activation_value(double x, int bits, double t);

// All representable levels in ascending order: 2^n - 1 symmetric levels for
// the signed grid (two for n = 1), 2^n levels for the unsigned grid.
std::vector<double> grid_of(int bits, double t, bool is_signed);

}  // namespace ssps
