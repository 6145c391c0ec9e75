#include "icrl/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "icrl/errors.hpp"

namespace icrl {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ContractError("tensor shape " + shape_str(shape) + " does not hold " +
                        std::to_string(values.size()) + " values");
  }
  node_ = std::make_shared<Node<T>>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <class T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <class T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <class T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return BasicTensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <class T>
T BasicTensor<T>::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->value[0];
}

template <class T>
void BasicTensor<T>::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <class T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor(node_->shape, node_->value, false);
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <class T>
std::vector<Node<T>*> topological_order(const BasicTensor<T>& root) {
  std::vector<Node<T>*> order;
  if (!root.defined()) return order;
  std::unordered_set<Node<T>*> visited;
  // Iterative post-order DFS; graphs from long episodes are deep enough that
  // recursion is not an option.
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

template <class T>
void backward(const BasicTensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a loss that depends on no differentiable input");
  }
  const auto order = topological_order(loss);
  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template std::vector<Node<float>*> topological_order(const BasicTensor<float>&);
template std::vector<Node<double>*> topological_order(const BasicTensor<double>&);
template void backward(const BasicTensor<float>&);
template void backward(const BasicTensor<double>&);

}  // namespace icrl
