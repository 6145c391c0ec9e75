#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "icrl/airn.hpp"
#include "icrl/tensor.hpp"

namespace icrl {

// Rows whose norm is at or below this are rejected by the cosine head.
inline constexpr double kMinClassNorm = 1e-12;

// Stacks class representations into an N x d matrix.
template <class T>
BasicTensor<T> stack_classes(std::span<const ClassRepresentation<T>> classes);

// logit(m, n) = tau * (c_n / ||c_n||)^T F_m for unit-norm query rows F_m.
// `tau` is a one-element tensor so a learnable temperature shares the path.
template <class T>
BasicTensor<T> cosine_logits(const BasicTensor<T>& queries, const BasicTensor<T>& classes,
                             const BasicTensor<T>& tau);

template <class T>
BasicTensor<T> cosine_logits(const BasicTensor<T>& queries, const BasicTensor<T>& classes,
                             double tau) {
  return cosine_logits(queries, classes, BasicTensor<T>::scalar(static_cast<T>(tau)));
}

// Row-wise argmax, ties to the lowest class index.
template <class T>
std::vector<std::size_t> predict(const BasicTensor<T>& logits);

template <class T>
BasicTensor<T> loss_cls(const BasicTensor<T>& logits, std::span<const std::size_t> labels);

// Cross-entropy of support instances against the class representations
// built from them, through the same cosine head.
template <class T>
BasicTensor<T> loss_intra(const BasicTensor<T>& support, const BasicTensor<T>& classes,
                          std::span<const std::size_t> labels, const BasicTensor<T>& tau);

// Sum over ordered pairs i != j of c^_i . c^_j (N(N-1) terms).
template <class T>
BasicTensor<T> loss_inter(const BasicTensor<T>& classes);

struct LossWeights {
  double lambda1 = 0.1;
  double lambda2 = 0.1;
  bool use_intra = true;
  bool use_inter = true;

  double effective_lambda1() const { return use_intra ? lambda1 : 0.0; }
  double effective_lambda2() const { return use_inter ? lambda2 : 0.0; }
};

template <class T>
struct LossBreakdown {
  BasicTensor<T> joint;  // differentiable l_cls + lambda1 l_intra + lambda2 l_inter
  double l_cls = 0.0;
  double l_intra = 0.0;
  double l_inter = 0.0;
  double l_joint = 0.0;
  double lambda1 = 0.0;  // effective coefficients (0 when a term is switched off)
  double lambda2 = 0.0;
};

template <class T>
LossBreakdown<T> loss_joint(const BasicTensor<T>& cls, const BasicTensor<T>& intra,
                            const BasicTensor<T>& inter, const LossWeights& weights);

}  // namespace icrl
