#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "icrl/tensor.hpp"

// Differentiable operations. Every op checks its shape contract and throws
// ContractError on violation. Only scalar-with-tensor broadcasting exists;
// all other binary ops require identical shapes.
namespace icrl {

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& a);

// Cross-correlation over a single c_in x h x w image. `bias` may be an
// undefined tensor; otherwise it has c_out entries.
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& kernel,
                      const BasicTensor<T>& bias, std::size_t stride = 1, std::size_t pad = 0);

template <class T>
BasicTensor<T> maxpool2d(const BasicTensor<T>& x, std::size_t window, std::size_t stride);

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x);

template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x);

template <class T>
BasicTensor<T> hadamard(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& x, double factor);

// x * s for a one-element tensor s (the only broadcast the library allows).
template <class T>
BasicTensor<T> scale_by(const BasicTensor<T>& x, const BasicTensor<T>& s);

template <class T>
BasicTensor<T> reduce_mean(const BasicTensor<T>& x, std::size_t axis);

// Sum of every element; rank-0 result.
template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x);

// Normalizes along the last axis (a vector, or each row of a matrix):
// x / max(||x||_2, eps). Rows at or below eps are logged as degenerate.
template <class T>
BasicTensor<T> l2_normalize(const BasicTensor<T>& x, double eps = 1e-12);

// Mean over rows of -log softmax(logits)[label], log-sum-exp stabilized.
template <class T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits,
                                     std::span<const std::size_t> labels);

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);

// Stacks same-shape tensors along a new leading axis.
template <class T>
BasicTensor<T> stack(std::span<const BasicTensor<T>> parts);

// Slice `index` of the leading axis.
template <class T>
BasicTensor<T> select(const BasicTensor<T>& x, std::size_t index);

// Horizontal flip (last axis) of a c x h x w image; not differentiable.
template <class T>
BasicTensor<T> flip_horizontal(const BasicTensor<T>& x);

// Records the on/off pattern of every ReLU and the argmax choice of every
// max-pool evaluated on this thread while installed. The gradient checker
// uses it to recognise perturbations that cross a non-differentiable point.
class KinkRecorder {
 public:
  KinkRecorder();
  ~KinkRecorder();
  KinkRecorder(const KinkRecorder&) = delete;
  KinkRecorder& operator=(const KinkRecorder&) = delete;

  void record(std::uint64_t fingerprint) { trace_.push_back(fingerprint); }
  const std::vector<std::uint64_t>& trace() const { return trace_; }
  void clear() { trace_.clear(); }

  static KinkRecorder* current() noexcept;

 private:
  std::vector<std::uint64_t> trace_;
  KinkRecorder* previous_;
};

}  // namespace icrl
