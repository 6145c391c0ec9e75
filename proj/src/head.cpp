#include "icrl/head.hpp"

#include <cmath>
#include <string>

#include "icrl/errors.hpp"
#include "icrl/ops.hpp"

namespace icrl {

namespace {

template <class T>
void require_class_norms(const BasicTensor<T>& classes, const char* op) {
  if (!classes.defined() || classes.rank() != 2 || classes.dim(0) == 0) {
    throw ContractError(std::string(op) + ": expected an N x d class matrix");
  }
  const std::size_t d = classes.dim(1);
  for (std::size_t n = 0; n < classes.dim(0); ++n) {
    double sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double v = classes.data()[n * d + i];
      sq += v * v;
    }
    if (!(std::sqrt(sq) > kMinClassNorm)) {
      throw ContractError(std::string(op) + ": class representation " + std::to_string(n) +
                          " has zero norm");
    }
  }
}

}  // namespace

template <class T>
BasicTensor<T> stack_classes(std::span<const ClassRepresentation<T>> classes) {
  std::vector<BasicTensor<T>> rows;
  rows.reserve(classes.size());
  for (const auto& c : classes) rows.push_back(c.vector);
  return stack(std::span<const BasicTensor<T>>(rows));
}

template <class T>
BasicTensor<T> cosine_logits(const BasicTensor<T>& queries, const BasicTensor<T>& classes,
                             const BasicTensor<T>& tau) {
  require_class_norms(classes, "cosine_logits");
  if (!queries.defined() || queries.rank() != 2 || queries.dim(1) != classes.dim(1)) {
    throw ContractError("cosine_logits: query matrix must be B x " +
                        std::to_string(classes.dim(1)));
  }
  const BasicTensor<T> unit = l2_normalize(classes);
  return scale_by(matmul(queries, transpose(unit)), tau);
}

template <class T>
std::vector<std::size_t> predict(const BasicTensor<T>& logits) {
  if (!logits.defined() || logits.rank() != 2) throw ContractError("predict: expected B x N logits");
  const std::size_t B = logits.dim(0), N = logits.dim(1);
  std::vector<std::size_t> out(B, 0);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t best = 0;
    for (std::size_t n = 1; n < N; ++n)
      if (logits.data()[b * N + n] > logits.data()[b * N + best]) best = n;
    out[b] = best;
  }
  return out;
}

template <class T>
BasicTensor<T> loss_cls(const BasicTensor<T>& logits, std::span<const std::size_t> labels) {
  return softmax_cross_entropy(logits, labels);
}

template <class T>
BasicTensor<T> loss_intra(const BasicTensor<T>& support, const BasicTensor<T>& classes,
                          std::span<const std::size_t> labels, const BasicTensor<T>& tau) {
  return softmax_cross_entropy(cosine_logits(support, classes, tau), labels);
}

template <class T>
BasicTensor<T> loss_inter(const BasicTensor<T>& classes) {
  require_class_norms(classes, "loss_inter");
  const BasicTensor<T> unit = l2_normalize(classes);
  const BasicTensor<T> gram = matmul(unit, transpose(unit));
  return sub(sum(gram), sum(hadamard(unit, unit)));
}

template <class T>
LossBreakdown<T> loss_joint(const BasicTensor<T>& cls, const BasicTensor<T>& intra,
                            const BasicTensor<T>& inter, const LossWeights& weights) {
  if (weights.lambda1 < 0.0 || weights.lambda2 < 0.0) {
    throw ContractError("loss_joint: trade-off coefficients must be non-negative");
  }
  LossBreakdown<T> out;
  out.lambda1 = weights.effective_lambda1();
  out.lambda2 = weights.effective_lambda2();
  out.joint = add(add(cls, scale(intra, out.lambda1)), scale(inter, out.lambda2));
  out.l_cls = cls.item();
  out.l_intra = intra.item();
  out.l_inter = inter.item();
  out.l_joint = out.joint.item();
  return out;
}

#define ICRL_INSTANTIATE_HEAD(T)                                                                \
  template BasicTensor<T> stack_classes(std::span<const ClassRepresentation<T>>);               \
  template BasicTensor<T> cosine_logits(const BasicTensor<T>&, const BasicTensor<T>&,           \
                                        const BasicTensor<T>&);                                 \
  template std::vector<std::size_t> predict(const BasicTensor<T>&);                             \
  template BasicTensor<T> loss_cls(const BasicTensor<T>&, std::span<const std::size_t>);        \
  template BasicTensor<T> loss_intra(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                     std::span<const std::size_t>, const BasicTensor<T>&);      \
  template BasicTensor<T> loss_inter(const BasicTensor<T>&);                                    \
  template LossBreakdown<T> loss_joint(const BasicTensor<T>&, const BasicTensor<T>&,            \
                                       const BasicTensor<T>&, const LossWeights&);

ICRL_INSTANTIATE_HEAD(float)
ICRL_INSTANTIATE_HEAD(double)

#undef ICRL_INSTANTIATE_HEAD

}  // namespace icrl
