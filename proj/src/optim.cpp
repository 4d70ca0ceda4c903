#include "ssps/optim.hpp"

#include <cmath>

#include "ssps/errors.hpp"

namespace ssps {

void sgd_step(std::span<Tensor> params, double lr, double weight_decay) {
  if (lr < 0.0 || weight_decay < 0.0) throw ConfigError("sgd_step: negative rate");
  for (auto& p : params) {
    if (p.has_grad()) {
      auto d = p.mutable_data();
      const auto g = p.grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= lr * (g[i] + weight_decay * d[i]);
      check_finite(d, "sgd_step");
    }
    p.zero_grad();
  }
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.mutable_grad()) g *= f;
    }
  }
  return norm;
}

void zero_grads(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

Sgd::Sgd(std::vector<Tensor> params, double lr, double momentum, double weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  if (lr <= 0.0 || weight_decay < 0.0) throw ConfigError("Sgd: invalid rates");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("Sgd: momentum must lie in [0, 1)");
  for (const auto& p : params_) velocity_.emplace_back(p.numel(), 0.0);
}

void Sgd::step() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    auto d = p.mutable_data();
    const auto g = p.grad();
    auto& v = velocity_[k];
    for (std::size_t i = 0; i < d.size(); ++i) {
      v[i] = momentum_ * v[i] + g[i] + weight_decay_ * d[i];
      d[i] -= lr_ * v[i];
    }
    check_finite(d, "sgd_step");
    p.zero_grad();
  }
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  if (options_.lr <= 0.0 || options_.eps <= 0.0) throw ConfigError("Adam: rates must be positive");
  if (options_.beta1 < 0.0 || options_.beta1 >= 1.0 || options_.beta2 < 0.0 ||
      options_.beta2 >= 1.0) {
    throw ConfigError("Adam: betas must lie in [0, 1)");
  }
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
    steps_.push_back(0);
  }
}

void Adam::step() {
  const auto& o = options_;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    const long t = ++steps_[k];
    const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(t));
    auto d = p.mutable_data();
    const auto g = p.grad();
    for (std::size_t i = 0; i < d.size(); ++i) {
      m_[k][i] = o.beta1 * m_[k][i] + (1.0 - o.beta1) * g[i];
      v_[k][i] = o.beta2 * v_[k][i] + (1.0 - o.beta2) * g[i] * g[i];
      d[i] -= o.lr * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + o.eps);
    }
    check_finite(d, "adam_step");
    p.zero_grad();
  }
}

}  // namespace ssps
