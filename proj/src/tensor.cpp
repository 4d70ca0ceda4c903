#include "ssps/tensor.hpp"

#include <cmath>
#include <unordered_set>

#include "ssps/errors.hpp"

namespace ssps {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void check_finite(std::span<const double> values, const char* where) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + where);
  }
}

namespace {

std::shared_ptr<detail::TensorImpl> make_impl(Shape shape, std::vector<double> values,
                                              bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor of shape " + shape_str(shape) + " given " +
                         std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return impl;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_impl(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_impl(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_impl({1}, {value}, requires_grad));
}

Tensor Tensor::from_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                       std::function<void(detail::TensorImpl&)> backward, const char* op) {
  check_finite(values, op);
  auto impl = make_impl(std::move(shape), std::move(values), false);
  impl->op = op;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    impl->requires_grad = true;
    impl->parents.reserve(parents.size());
    for (auto& p : parents) impl->parents.push_back(p.impl_);
    impl->backward_fn = std::move(backward);
  }
  return Tensor(std::move(impl));
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor Tensor::detach() const { return from(impl_->shape, impl_->data, false); }

Tensor Tensor::clone() const { return from(impl_->shape, impl_->data, impl_->requires_grad); }

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.defined() || !root.requires_grad()) return tape;
  // Iterative post-order DFS.
  std::unordered_set<detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(root.impl(), 0);
  visited.insert(root.impl());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void Tape::run_backward() const {
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    auto* node = *it;
    if (node->backward_fn) {
      for (auto& p : node->parents) {
        if (p->requires_grad) p->ensure_grad();
      }
      node->backward_fn(*node);
    }
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss");
  }
  if (!loss.requires_grad()) throw ContractError("backward() on a loss with no grad path");
  Tape tape = Tape::record(loss);
  for (auto* node : tape.nodes()) {
    // Interior nodes start from zero; leaves keep accumulating.
    if (node->backward_fn) {
      node->grad.assign(node->data.size(), 0.0);
    } else {
      node->ensure_grad();
    }
  }
  loss.impl()->grad[0] += 1.0;
  tape.run_backward();
  for (auto* node : tape.nodes()) {
    if (!node->backward_fn) check_finite(node->grad, "gradient");
  }
}

}  // namespace ssps
