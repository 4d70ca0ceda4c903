#include "ssps/ops.hpp"

#include <algorithm>
#include <cmath>

#include "ssps/errors.hpp"

namespace ssps::ops {

using detail::TensorImpl;

namespace {

TensorImpl& parent(TensorImpl& self, std::size_t i) { return *self.parents[i]; }

bool wants(TensorImpl& self, std::size_t i) { return self.parents[i]->requires_grad; }

enum class Bcast { kSame, kLeftScalar, kRightScalar };

Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::kSame;
  if (a.numel() == 1) return Bcast::kLeftScalar;
  if (b.numel() == 1) return Bcast::kRightScalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()));
}

// Applies f elementwise under scalar broadcasting; returns output shape.
template <typename F>
std::vector<double> zip(const Tensor& a, const Tensor& b, Bcast k, F f) {
  const auto da = a.data();
  const auto db = b.data();
  const std::size_t n = std::max(da.size(), db.size());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = k == Bcast::kLeftScalar ? da[0] : da[i];
    const double y = k == Bcast::kRightScalar ? db[0] : db[i];
    out[i] = f(x, y);
  }
  return out;
}

// Accumulates `g` into a parent, reducing over broadcast if it is the scalar side.
void accumulate(TensorImpl& p, std::size_t i, double g, bool is_scalar) {
  p.grad[is_scalar ? 0 : i] += g;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
  std::vector<double> out(p * r, 0.0);
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = da[i * q + k];
      const double* brow = &db[k * r];
      double* orow = &out[i * r];
      for (std::size_t j = 0; j < r; ++j) orow[j] += aik * brow[j];
    }
  }
  return Tensor::from_op(
      {p, r}, std::move(out), {a, b},
      [p, q, r](TensorImpl& self) {
        const auto& g = self.grad;
        auto& A = parent(self, 0);
        auto& B = parent(self, 1);
        if (A.requires_grad) {
          // dA = G * B^T
          for (std::size_t i = 0; i < p; ++i) {
            for (std::size_t k = 0; k < q; ++k) {
              double s = 0.0;
              for (std::size_t j = 0; j < r; ++j) s += g[i * r + j] * B.data[k * r + j];
              A.grad[i * q + k] += s;
            }
          }
        }
        if (B.requires_grad) {
          // dB = A^T * G
          for (std::size_t i = 0; i < p; ++i) {
            for (std::size_t k = 0; k < q; ++k) {
              const double aik = A.data[i * q + k];
              for (std::size_t j = 0; j < r; ++j) B.grad[k * r + j] += aik * g[i * r + j];
            }
          }
        }
      },
      "matmul");
}

Tensor conv2d(const Tensor& x, const Tensor& w, Conv2dParams params) {
  if (params.stride == 0) throw ConfigError("conv2d: stride must be positive");
  if (x.rank() != 4 || w.rank() != 4) {
    throw DimensionError("conv2d: expected rank-4 input and kernel, got " + shape_str(x.shape()) +
                         " and " + shape_str(w.shape()));
  }
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t K = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C) {
    throw DimensionError("conv2d: input has " + std::to_string(C) + " channels, kernel expects " +
                         std::to_string(w.dim(1)));
  }
  const std::size_t pad = params.padding, stride = params.stride;
  if (H + 2 * pad < kh || W + 2 * pad < kw) {
    throw ConfigError("conv2d: kernel larger than padded input");
  }
  const std::size_t OH = (H + 2 * pad - kh) / stride + 1;
  const std::size_t OW = (W + 2 * pad - kw) / stride + 1;

  std::vector<double> out(N * K * OH * OW, 0.0);
  const auto dx = x.data();
  const auto dw = w.data();
  auto visit = [=](auto&& fn) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
              const std::size_t widx = ((k * C + c) * kh + i) * kw + j;
              for (std::size_t oh = 0; oh < OH; ++oh) {
                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + i) -
                                          static_cast<std::ptrdiff_t>(pad);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t ow = 0; ow < OW; ++ow) {
                  const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + j) -
                                            static_cast<std::ptrdiff_t>(pad);
                  if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                  const std::size_t xidx = ((n * C + c) * H + ih) * W + iw;
                  const std::size_t oidx = ((n * K + k) * OH + oh) * OW + ow;
                  fn(xidx, widx, oidx);
                }
              }
            }
  };
  visit([&](std::size_t xi, std::size_t wi, std::size_t oi) { out[oi] += dx[xi] * dw[wi]; });
  return Tensor::from_op(
      {N, K, OH, OW}, std::move(out), {x, w},
      [visit](TensorImpl& self) {
        auto& X = parent(self, 0);
        auto& Wt = parent(self, 1);
        const auto& g = self.grad;
        if (X.requires_grad) {
          visit([&](std::size_t xi, std::size_t wi, std::size_t oi) {
            X.grad[xi] += g[oi] * Wt.data[wi];
          });
        }
        if (Wt.requires_grad) {
          visit([&](std::size_t xi, std::size_t wi, std::size_t oi) {
            Wt.grad[wi] += g[oi] * X.data[xi];
          });
        }
      },
      "conv2d");
}

Tensor add(const Tensor& a, const Tensor& b) {
  const auto k = broadcast_kind(a, b, "add");
  auto out = zip(a, b, k, [](double x, double y) { return x + y; });
  const Shape shape = k == Bcast::kLeftScalar ? b.shape() : a.shape();
  return Tensor::from_op(
      shape, std::move(out), {a, b},
      [k](TensorImpl& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          if (wants(self, 0)) accumulate(parent(self, 0), i, self.grad[i], k == Bcast::kLeftScalar);
          if (wants(self, 1)) accumulate(parent(self, 1), i, self.grad[i], k == Bcast::kRightScalar);
        }
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const auto k = broadcast_kind(a, b, "sub");
  auto out = zip(a, b, k, [](double x, double y) { return x - y; });
  const Shape shape = k == Bcast::kLeftScalar ? b.shape() : a.shape();
  return Tensor::from_op(
      shape, std::move(out), {a, b},
      [k](TensorImpl& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          if (wants(self, 0)) accumulate(parent(self, 0), i, self.grad[i], k == Bcast::kLeftScalar);
          if (wants(self, 1)) accumulate(parent(self, 1), i, -self.grad[i], k == Bcast::kRightScalar);
        }
      },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const auto k = broadcast_kind(a, b, "mul");
  auto out = zip(a, b, k, [](double x, double y) { return x * y; });
  const Shape shape = k == Bcast::kLeftScalar ? b.shape() : a.shape();
  return Tensor::from_op(
      shape, std::move(out), {a, b},
      [k](TensorImpl& self) {
        auto& A = parent(self, 0);
        auto& B = parent(self, 1);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const double av = A.data[k == Bcast::kLeftScalar ? 0 : i];
          const double bv = B.data[k == Bcast::kRightScalar ? 0 : i];
          if (A.requires_grad) accumulate(A, i, self.grad[i] * bv, k == Bcast::kLeftScalar);
          if (B.requires_grad) accumulate(B, i, self.grad[i] * av, k == Bcast::kRightScalar);
        }
      },
      "mul");
}

namespace {

// Elementwise unary op given value and derivative functions of (input, output).
template <typename F, typename D>
Tensor unary(const Tensor& x, const char* name, F f, D df) {
  std::vector<double> out(x.numel());
  const auto dx = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(dx[i]);
  return Tensor::from_op(
      x.shape(), std::move(out), {x},
      [df](TensorImpl& self) {
        auto& X = parent(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          X.grad[i] += self.grad[i] * df(X.data[i], self.data[i]);
        }
      },
      name);
}

}  // namespace

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, "scale", [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      a, "add_scalar", [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  return unary(
      x, "clamp", [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor sqrt(const Tensor& x) {
  for (double v : x.data()) {
    if (v < 0.0) throw ContractError("sqrt of negative value");
  }
  return unary(
      x, "sqrt", [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& x) {
  return unary(
      x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor round_ste(const Tensor& x) {
  return unary(
      x, "round_ste", [](double v) { return std::round(v); }, [](double, double) { return 1.0; });
}

Tensor straight_through(const std::vector<double>& hard, const Tensor& soft) {
  if (hard.size() != soft.numel()) {
    throw DimensionError("straight_through: hard values do not match soft tensor");
  }
  return Tensor::from_op(
      soft.shape(), hard, {soft},
      [](TensorImpl& self) {
        auto& S = parent(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) S.grad[i] += self.grad[i];
      },
      "straight_through");
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return Tensor::from_op(
      {1}, {s}, {x},
      [](TensorImpl& self) {
        auto& X = parent(self, 0);
        for (auto& g : X.grad) g += self.grad[0];
      },
      "sum");
}

Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  return scale(sum(x), inv);
}

Tensor weighted_sum(const Tensor& x, const std::vector<double>& coeffs) {
  if (coeffs.size() != x.numel()) throw DimensionError("weighted_sum: coefficient count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < coeffs.size(); ++i) s += coeffs[i] * x[i];
  return Tensor::from_op(
      {1}, {s}, {x},
      [coeffs](TensorImpl& self) {
        auto& X = parent(self, 0);
        for (std::size_t i = 0; i < coeffs.size(); ++i) X.grad[i] += coeffs[i] * self.grad[0];
      },
      "weighted_sum");
}

Tensor select(const Tensor& x, std::size_t index) {
  if (index >= x.numel()) throw DimensionError("select: index out of range");
  return Tensor::from_op(
      {1}, {x[index]}, {x},
      [index](TensorImpl& self) { parent(self, 0).grad[index] += self.grad[0]; }, "select");
}

Tensor softmax(const Tensor& v) {
  if (v.numel() == 0) throw DimensionError("softmax: empty vector");
  const auto d = v.data();
  const double mx = *std::max_element(d.begin(), d.end());
  std::vector<double> out(d.size());
  double z = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) z += (out[i] = std::exp(d[i] - mx));
  for (auto& o : out) o /= z;
  return Tensor::from_op(
      v.shape(), std::move(out), {v},
      [](TensorImpl& self) {
        auto& V = parent(self, 0);
        double dot = 0.0;
        for (std::size_t i = 0; i < self.data.size(); ++i) dot += self.grad[i] * self.data[i];
        for (std::size_t i = 0; i < self.data.size(); ++i) {
          V.grad[i] += self.data[i] * (self.grad[i] - dot);
        }
      },
      "softmax");
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be [N, C]");
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  if (labels.size() != N) throw DimensionError("cross_entropy: label count mismatch");
  const auto d = logits.data();
  std::vector<double> probs(N * C);
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= C) {
      throw ContractError("cross_entropy: label out of range");
    }
    const double* row = &d[n * C];
    const double mx = *std::max_element(row, row + C);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += (probs[n * C + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < C; ++c) probs[n * C + c] /= z;
    loss -= (row[labels[n]] - mx) - std::log(z);
  }
  loss /= static_cast<double>(N);
  return Tensor::from_op(
      {1}, {loss}, {logits},
      [probs = std::move(probs), labels, N, C](TensorImpl& self) {
        auto& L = parent(self, 0);
        const double g = self.grad[0] / static_cast<double>(N);
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t c = 0; c < C; ++c) {
            const double target = static_cast<std::size_t>(labels[n]) == c ? 1.0 : 0.0;
            L.grad[n * C + c] += g * (probs[n * C + c] - target);
          }
        }
      },
      "cross_entropy");
}

namespace {

// Channel layout helper for rank-2 [N, F] and rank-4 [N, C, H, W] tensors.
struct ChannelLayout {
  std::size_t n, c, inner;
  std::size_t channel_of(std::size_t i) const { return (i / inner) % c; }
};

ChannelLayout channel_layout(const Tensor& x, const char* op) {
  if (x.rank() == 2) return {x.dim(0), x.dim(1), 1};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
  throw DimensionError(std::string(op) + ": expected rank 2 or 4, got " + shape_str(x.shape()));
}

}  // namespace

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const auto L = channel_layout(x, "add_bias");
  if (bias.numel() != L.c) throw DimensionError("add_bias: bias length does not match channels");
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[L.channel_of(i)];
  return Tensor::from_op(
      x.shape(), std::move(out), {x, bias},
      [L](TensorImpl& self) {
        auto& X = parent(self, 0);
        auto& B = parent(self, 1);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          if (X.requires_grad) X.grad[i] += self.grad[i];
          if (B.requires_grad) B.grad[L.channel_of(i)] += self.grad[i];
        }
      },
      "add_bias");
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  return Tensor::from_op(
      std::move(shape), std::vector<double>(x.data().begin(), x.data().end()), {x},
      [](TensorImpl& self) {
        auto& X = parent(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) X.grad[i] += self.grad[i];
      },
      "reshape");
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("global_avg_pool: expected [N, C, H, W]");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<double> out(N * C, 0.0);
  const auto d = x.data();
  for (std::size_t i = 0; i < N * C; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < HW; ++j) s += d[i * HW + j];
    out[i] = s / static_cast<double>(HW);
  }
  return Tensor::from_op(
      {N, C}, std::move(out), {x},
      [HW](TensorImpl& self) {
        auto& X = parent(self, 0);
        const double inv = 1.0 / static_cast<double>(HW);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          for (std::size_t j = 0; j < HW; ++j) X.grad[i * HW + j] += self.grad[i] * inv;
        }
      },
      "global_avg_pool");
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                  std::vector<double>* batch_mean, std::vector<double>* batch_var) {
  const auto L = channel_layout(x, "batch_norm");
  if (gamma.numel() != L.c || beta.numel() != L.c) {
    throw DimensionError("batch_norm: affine parameters do not match channels");
  }
  const double count = static_cast<double>(L.n * L.inner);
  std::vector<double> mu(L.c, 0.0), var(L.c, 0.0);
  const auto d = x.data();
  for (std::size_t i = 0; i < d.size(); ++i) mu[L.channel_of(i)] += d[i];
  for (auto& m : mu) m /= count;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double c = d[i] - mu[L.channel_of(i)];
    var[L.channel_of(i)] += c * c;
  }
  for (auto& v : var) v /= count;
  std::vector<double> inv_std(L.c);
  for (std::size_t c = 0; c < L.c; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  std::vector<double> xhat(d.size()), out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto c = L.channel_of(i);
    xhat[i] = (d[i] - mu[c]) * inv_std[c];
    out[i] = gamma[c] * xhat[i] + beta[c];
  }
  if (batch_mean) *batch_mean = mu;
  if (batch_var) *batch_var = var;
  return Tensor::from_op(
      x.shape(), std::move(out), {x, gamma, beta},
      [L, count, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorImpl& self) {
        auto& X = parent(self, 0);
        auto& G = parent(self, 1);
        auto& B = parent(self, 2);
        std::vector<double> sum_g(L.c, 0.0), sum_gx(L.c, 0.0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const auto c = L.channel_of(i);
          sum_g[c] += self.grad[i];
          sum_gx[c] += self.grad[i] * xhat[i];
        }
        if (G.requires_grad) {
          for (std::size_t c = 0; c < L.c; ++c) G.grad[c] += sum_gx[c];
        }
        if (B.requires_grad) {
          for (std::size_t c = 0; c < L.c; ++c) B.grad[c] += sum_g[c];
        }
        if (X.requires_grad) {
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const auto c = L.channel_of(i);
            X.grad[i] += G.data[c] * inv_std[c] / count *
                         (count * self.grad[i] - sum_g[c] - xhat[i] * sum_gx[c]);
          }
        }
      },
      "batch_norm");
}

Tensor batch_norm_fixed(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        const std::vector<double>& mean, const std::vector<double>& var,
                        double eps) {
  const auto L = channel_layout(x, "batch_norm_fixed");
  if (gamma.numel() != L.c || beta.numel() != L.c || mean.size() != L.c || var.size() != L.c) {
    throw DimensionError("batch_norm_fixed: parameters do not match channels");
  }
  std::vector<double> inv_std(L.c);
  for (std::size_t c = 0; c < L.c; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  const auto d = x.data();
  std::vector<double> xhat(d.size()), out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto c = L.channel_of(i);
    xhat[i] = (d[i] - mean[c]) * inv_std[c];
    out[i] = gamma[c] * xhat[i] + beta[c];
  }
  return Tensor::from_op(
      x.shape(), std::move(out), {x, gamma, beta},
      [L, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorImpl& self) {
        auto& X = parent(self, 0);
        auto& G = parent(self, 1);
        auto& B = parent(self, 2);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const auto c = L.channel_of(i);
          if (X.requires_grad) X.grad[i] += self.grad[i] * G.data[c] * inv_std[c];
          if (G.requires_grad) G.grad[c] += self.grad[i] * xhat[i];
          if (B.requires_grad) B.grad[c] += self.grad[i];
        }
      },
      "batch_norm_fixed");
}

Tensor shortcut(const Tensor& x, std::size_t out_channels, std::size_t stride) {
  if (x.rank() != 4) throw DimensionError("shortcut: expected [N, C, H, W]");
  if (stride == 0) throw ConfigError("shortcut: stride must be positive");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (out_channels < C) throw DimensionError("shortcut: cannot reduce channel count");
  const std::size_t OH = (H + stride - 1) / stride, OW = (W + stride - 1) / stride;
  // Zero channels are split evenly before and after the existing ones.
  const std::size_t front = (out_channels - C) / 2;
  std::vector<double> out(N * out_channels * OH * OW, 0.0);
  std::vector<std::size_t> src(out.size(), static_cast<std::size_t>(-1));
  const auto d = x.data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t h = 0; h < OH; ++h)
        for (std::size_t w = 0; w < OW; ++w) {
          const std::size_t o = ((n * out_channels + c + front) * OH + h) * OW + w;
          const std::size_t i = ((n * C + c) * H + h * stride) * W + w * stride;
          out[o] = d[i];
          src[o] = i;
        }
  return Tensor::from_op(
      {N, out_channels, OH, OW}, std::move(out), {x},
      [src = std::move(src)](TensorImpl& self) {
        auto& X = parent(self, 0);
        for (std::size_t o = 0; o < src.size(); ++o) {
          if (src[o] != static_cast<std::size_t>(-1)) X.grad[src[o]] += self.grad[o];
        }
      },
      "shortcut");
}

}  // namespace ssps::ops
