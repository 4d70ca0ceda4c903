#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ssps {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass touches this node
  bool requires_grad = false;

  // Graph edges, only populated when the node requires grad.
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;
  const char* op = "leaf";

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Dense row-major array of doubles with an optional gradient buffer.
// Copies are shallow: two Tensor handles may refer to the same storage,
// which is how parameters are shared between a model and its optimizer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  // Builds the output of a differentiable op. `backward` receives the output
  // node (whose grad is populated) and must accumulate into the parents.
  // If no parent requires grad, the edges are dropped.
  static Tensor from_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                        std::function<void(detail::TensorImpl&)> backward, const char* op);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;
  double operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool has_grad() const { return impl_->grad.size() == impl_->data.size() && !impl_->data.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  void zero_grad() { impl_->grad.clear(); }

  // Fresh leaf holding a copy of the values; never requires grad.
  Tensor detach() const;
  // Fresh leaf holding a copy of values, keeping requires_grad.
  Tensor clone() const;

  const char* op() const { return impl_->op; }
  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& shared_impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Topologically ordered list of the grad-requiring nodes reachable from a
// root. Rebuilt for every backward pass; never retained across iterations.
class Tape {
 public:
  static Tape record(const Tensor& root);

  const std::vector<detail::TensorImpl*>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  // Runs backward rules from the last node to the first, visiting each once.
  void run_backward() const;

 private:
  std::vector<detail::TensorImpl*> nodes_;
};

// Reverse-mode pass from a scalar loss. Leaf gradients accumulate until
// cleared.
void backward(const Tensor& loss);

// Throws NumericError naming `where` if any value is NaN or Inf.
void check_finite(std::span<const double> values, const char* where);

}  // namespace ssps
