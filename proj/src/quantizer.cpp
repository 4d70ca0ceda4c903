#include "ssps/quantizer.hpp"

#include <algorithm>
#include <cmath>

#include "ssps/errors.hpp"

namespace ssps {

BitWidth::BitWidth(int bits) : bits_(bits) {
  if (!valid(bits)) throw ContractError("invalid bit-width " + std::to_string(bits));
}

namespace {

double threshold_value(const Tensor& t) {
  if (!t.defined() || t.numel() != 1) throw ContractError("quantizer threshold must be a scalar");
  const double v = t[0];
  if (!(v > 0.0)) throw ContractError("quantizer threshold must be positive, got " + std::to_string(v));
  return v;
}

double signed_levels(int bits) { return std::ldexp(1.0, bits - 1) - 1.0; }
double unsigned_levels(int bits) { return std::ldexp(1.0, bits) - 1.0; }

}  // namespace

double quantize_weight_value(double w, int bits, double t) {
  if (!(t > 0.0)) throw ContractError("quantizer threshold must be positive");
  if (bits >= 16) return w;
  const double r = std::clamp(w / t, -1.0, 1.0);
  if (bits == 1) return r >= 0.0 ? t : -t;
  const double levels = signed_levels(bits);
  return std::round(r * levels) * (t / levels);
}

double quantize_activation_value(double x, int bits, double t) {
  if (!(t > 0.0)) throw ContractError("quantizer threshold must be positive");
  if (bits >= 16) return x;
  const double levels = unsigned_levels(bits);
  return std::round(std::clamp(x / t, 0.0, 1.0) * levels) * (t / levels);
}

std::vector<double> grid_of(int bits, double t, bool is_signed) {
  if (!BitWidth::valid(bits) || bits >= 16) throw ContractError("grid_of: needs an integer bit-width");
  std::vector<double> grid;
  if (is_signed) {
    if (bits == 1) return {-t, t};
    const double levels = signed_levels(bits);
    const double d = t / levels;
    const int k = static_cast<int>(levels);
    for (int i = -k; i <= k; ++i) grid.push_back(i * d);
  } else {
    const double levels = unsigned_levels(bits);
    const double d = t / levels;
    const int k = static_cast<int>(levels);
    for (int i = 0; i <= k; ++i) grid.push_back(i * d);
  }
  return grid;
}

Tensor quantize_weights(const Tensor& w, BitWidth n, const Tensor& t) {
  const double tv = threshold_value(t);
  const int bits = n.bits();
  if (n.is_float()) {
    return Tensor::from_op(
        w.shape(), std::vector<double>(w.data().begin(), w.data().end()), {w, t},
        [](detail::TensorImpl& self) {
          auto& W = *self.parents[0];
          if (!W.requires_grad) return;
          for (std::size_t i = 0; i < self.grad.size(); ++i) W.grad[i] += self.grad[i];
        },
        "quantize_weights");
  }
  std::vector<double> out(w.numel());
  // -1 / +1 for saturated entries, 0 inside the clamp range.
  std::vector<signed char> sat(w.numel(), 0);
  const auto dw = w.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = quantize_weight_value(dw[i], bits, tv);
    if (dw[i] > tv) sat[i] = 1;
    if (dw[i] < -tv) sat[i] = -1;
  }
  return Tensor::from_op(
      w.shape(), std::move(out), {w, t},
      [sat = std::move(sat)](detail::TensorImpl& self) {
        auto& W = *self.parents[0];
        auto& T = *self.parents[1];
        double gt = 0.0;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          if (sat[i] == 0) {
            if (W.requires_grad) W.grad[i] += self.grad[i];
          } else {
            gt += self.grad[i] * sat[i];
          }
        }
        if (T.requires_grad) T.grad[0] += gt;
      },
      "quantize_weights");
}

Tensor quantize_activations(const Tensor& x, BitWidth m, const Tensor& t) {
  const double tv = threshold_value(t);
  const int bits = m.bits();
  if (m.is_float()) {
    return Tensor::from_op(
        x.shape(), std::vector<double>(x.data().begin(), x.data().end()), {x, t},
        [](detail::TensorImpl& self) {
          auto& X = *self.parents[0];
          if (!X.requires_grad) return;
          for (std::size_t i = 0; i < self.grad.size(); ++i) X.grad[i] += self.grad[i];
        },
        "quantize_activations");
  }
  std::vector<double> out(x.numel());
  // 0: inside, 1: above t, -1: below zero
  std::vector<signed char> region(x.numel(), 0);
  const auto dx = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = quantize_activation_value(dx[i], bits, tv);
    if (dx[i] > tv) region[i] = 1;
    if (dx[i] < 0.0) region[i] = -1;
  }
  return Tensor::from_op(
      x.shape(), std::move(out), {x, t},
      [region = std::move(region)](detail::TensorImpl& self) {
        auto& X = *self.parents[0];
        auto& T = *self.parents[1];
        double gt = 0.0;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          if (region[i] == 0) {
            if (X.requires_grad) X.grad[i] += self.grad[i];
          } else if (region[i] == 1) {
            gt += self.grad[i];
          }
        }
        if (T.requires_grad) T.grad[0] += gt;
      },
      "quantize_activations");
}

}  // namespace ssps
