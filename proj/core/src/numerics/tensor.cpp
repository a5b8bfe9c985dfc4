#include "terralabel/numerics/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "terralabel/common/error.hpp"

namespace terralabel::numerics {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream ss;
  ss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) ss << ", ";
    ss << shape[i];
  }
  ss << ']';
  return ss.str();
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T{0}, requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  std::vector<T> values(shape_size(shape), value);
  return from(std::move(shape), std::move(values), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_string(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return BasicTensor(std::move(node));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) {
    throw ShapeError("item: tensor of shape " + shape_string(shape()) + " is not a scalar");
  }
  return node_->value[0];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return from(shape(), node_->value, false);
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order with every node once.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next_parent] = stack.back();
    if (next_parent < node->parents.size()) {
      Node<T>* parent = node->parents[next_parent++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients are per-call scratch; only leaves accumulate.
  for (Node<T>* node : order) {
    if (node->backward_fn) node->grad.clear();
  }
  loss.node()->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template void backward<float>(const BasicTensor<float>&);
template void backward<double>(const BasicTensor<double>&);

}  // namespace terralabel::numerics
