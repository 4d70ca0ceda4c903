#pragma once

#include <span>
#include <vector>

#include "ssps/tensor.hpp"

namespace ssps {

// p <- p - lr * (grad + weight_decay * p), then clears grads.
void sgd_step(std::span<Tensor> params, double lr, double weight_decay = 0.0);

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

void zero_grads(std::span<Tensor> params);

// SGD with heavy-ball momentum and L2 weight decay:
// v <- mu v + (g + wd p); p <- p - lr v.
class Sgd {
 public:
  Sgd() = default;
  Sgd(std::vector<Tensor> params, double lr, double momentum, double weight_decay);

  // Updates every parameter that has a gradient, then clears grads.
  void step();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  std::vector<Tensor>& params() { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_ = 1e-3, momentum_ = 0.0, weight_decay_ = 0.0;
};

struct AdamOptions {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are bound to the parameter list
// given at construction.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor> params, AdamOptions options);

  // Updates every parameter that has a gradient, then clears grads.
  void step();
  void set_lr(double lr) { options_.lr = lr; }
  const AdamOptions& options() const { return options_; }
  std::vector<Tensor>& params() { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  std::vector<long> steps_;
  AdamOptions options_;
};

}  // namespace ssps
