#pragma once

#include <cstddef>
#include <vector>

#include "ssps/tensor.hpp"

// Differentiable operations on Tensor. Broadcasting is limited to
// scalar-with-tensor and equal shapes; anything else is a DimensionError.
namespace ssps::ops {

Tensor matmul(const Tensor& a, const Tensor& b);

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
};
// Cross-correlation. x: [N, C, H, W], w: [K, C, kh, kw] -> [N, K, H', W'].
Tensor conv2d(const Tensor& x, const Tensor& w, Conv2dParams params);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor relu(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);

// Forward: round half away from zero. Backward: incoming gradient unchanged.
Tensor round_ste(const Tensor& x);

// Forward: values of `hard`. Backward: gradient routed unchanged to `soft`.
Tensor straight_through(const std::vector<double>& hard, const Tensor& soft);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// sum_i coeffs[i] * x[i] as a scalar.
Tensor weighted_sum(const Tensor& x, const std::vector<double>& coeffs);
// Scalar element of a tensor.
Tensor select(const Tensor& x, std::size_t index);

Tensor softmax(const Tensor& v);
// Mean cross-entropy of row logits [N, C] against integer labels.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Adds a per-feature (rank 2) or per-channel (rank 4) bias.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor reshape(const Tensor& x, Shape shape);
// [N, C, H, W] -> [N, C]
Tensor global_avg_pool(const Tensor& x);

// Batch normalization over N (and H, W for rank 4) with batch statistics.
// Writes the batch mean and biased variance when the pointers are non-null.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                  std::vector<double>* batch_mean = nullptr,
                  std::vector<double>* batch_var = nullptr);
// Batch normalization with fixed statistics.
Tensor batch_norm_fixed(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        const std::vector<double>& mean, const std::vector<double>& var,
                        double eps);

// Parameter-free residual projection: spatial subsampling by `stride` and
// zero-padding of channels up to `out_channels`.
Tensor shortcut(const Tensor& x, std::size_t out_channels, std::size_t stride);

}  // namespace ssps::ops
