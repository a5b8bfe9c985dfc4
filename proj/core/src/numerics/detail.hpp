#pragma once

#include <initializer_list>
#include <memory>
#include <string>

#include "terralabel/common/error.hpp"
#include "terralabel/numerics/tensor.hpp"

namespace terralabel::numerics::detail {

/// Creates the output node of an op. The parent links and backward rule are
/// kept only when some parent requires grad, so inference builds no tape.
template <typename T>
BasicTensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                           std::initializer_list<std::shared_ptr<Node<T>>> parents,
                           std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  for (const auto& p : parents) {
    if (p && p->requires_grad) node->requires_grad = true;
  }
  if (node->requires_grad) {
    node->parents.assign(parents.begin(), parents.end());
    node->backward_fn = std::move(backward_fn);
  }
  return BasicTensor<T>(std::move(node));
}

template <typename T>
BasicTensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                           std::vector<std::shared_ptr<Node<T>>> parents,
                           std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  for (const auto& p : parents) {
    if (p && p->requires_grad) node->requires_grad = true;
  }
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return BasicTensor<T>(std::move(node));
}

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                   shape_string(b));
}

/// Row-major C = alpha * op(A) * op(B) + beta * C.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc);

}  // namespace terralabel::numerics::detail
