#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace icrl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <class T>
struct Node;

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

// One vertex of the computation record. Values are produced eagerly by the
// op that creates the node; `backward` reads this node's grad and
// accumulates into the grads of `inputs`.
template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a backward pass (or zero_grad) touches it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr<T>> inputs;
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

// Handle to a node. Copies alias the same node, which is how parameters are
// shared between the optimizer, the model and every graph that reads them.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false);
  explicit BasicTensor(NodePtr<T> node) : node_(std::move(node)) {}

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  // Direct write access; only parameter updates and initializers use this.
  std::span<T> mutable_data() { return node_->value; }
  T item() const;
  T at(std::size_t flat_index) const { return node_->value.at(flat_index); }

  bool requires_grad() const noexcept { return node_->requires_grad; }
  bool has_grad() const noexcept { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  // Fresh leaf with copied values and no history.
  BasicTensor detach() const;

  Node<T>* node() const noexcept { return node_.get(); }
  const NodePtr<T>& node_ptr() const noexcept { return node_; }

 private:
  NodePtr<T> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Graph recording is on by default; a guard disables it on the current
// thread (evaluation workers).
bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Nodes reachable from `root` in topological order (inputs before users).
template <class T>
std::vector<Node<T>*> topological_order(const BasicTensor<T>& root);

// Reverse-mode sweep from a scalar. Gradients accumulate; callers zero them.
template <class T>
void backward(const BasicTensor<T>& loss);

template <class To, class From>
BasicTensor<To> cast(const BasicTensor<From>& t, bool requires_grad) {
  std::vector<To> values(t.data().begin(), t.data().end());
  return BasicTensor<To>(t.shape(), std::move(values), requires_grad);
}

}  // namespace icrl
