#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace terralabel::numerics {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// One vertex of the reverse-mode tape. Nodes are created by ops and kept
/// alive only through the handles (and child nodes) that reference them, so
/// the tape is released as soon as the loss tensor goes out of scope.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  /// Gradient buffer, zero-initialised on first use.
  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T{0});
    return grad;
  }
};

/// Dense row-major tensor handle with shared ownership of its tape node.
/// Copies alias the same storage; use clone() for a deep copy.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  /// Mutable access for leaves (parameter updates, data loading). Mutating a
  /// tensor that already feeds a recorded op invalidates that op's backward.
  std::span<T> mutable_data() { return node_->value; }

  /// Accumulated gradient; empty when none has been propagated.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  const char* op() const { return node_->op; }

  T item() const;
  T at(std::size_t flat_index) const { return node_->value.at(flat_index); }

  /// Same values, no tape history, no grad requirement.
  BasicTensor detach() const;
  BasicTensor clone() const { return detach(); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Propagates d(loss)/d(x) into every tensor reachable from `loss` that
/// requires grad. Gradients accumulate across calls until zero_grad().
template <typename T>
void backward(const BasicTensor<T>& loss);

/// Casts between storage precisions (used by 64-bit gradient checks).
template <typename To, typename From>
BasicTensor<To> cast(const BasicTensor<From>& x, bool requires_grad = false) {
  std::vector<To> values(x.data().begin(), x.data().end());
  return BasicTensor<To>::from(x.shape(), std::move(values), requires_grad);
}

}  // namespace terralabel::numerics
