#pragma once

#include <cstddef>
#include <utility>

#include "icrl/params.hpp"
#include "icrl/rng.hpp"
#include "icrl/tensor.hpp"

// Adaptive instance revaluing: K support representations of one class are
// summarized to one scalar each, a two-layer MLP maps the K summaries to K
// significance weights, and the class representation is their weighted sum.
namespace icrl {

// Hidden width of the weighting MLP: 4K, at least 4.
std::size_t airn_hidden_width(std::size_t shots);

// airn.w3.weight (H x K), airn.w3.bias (H x 1), airn.w4.weight (K x H),
// airn.w4.bias (K x 1). Weights uniform in +-1/sqrt(fan_in) unless
// `zero_init`, biases zero.
void init_airn_params(ParameterSet<float>& params, std::size_t shots, std::size_t hidden, Rng& rng,
                      bool zero_init = false);

// Shot count the AIRN parameters were built for.
template <class T>
std::size_t airn_shots(const ParameterSet<T>& params);

// Weights a_1..a_K, each strictly inside (0, 1).
template <class T>
struct SignificanceVector {
  BasicTensor<T> weights;  // shape {K}
};

template <class T>
struct ClassRepresentation {
  BasicTensor<T> vector;  // shape {d}; sum_k a_k F^k, not normalized
  std::size_t class_id = 0;
};

// v_k = mean of the coordinates of F^k; `instances` is K x d.
template <class T>
BasicTensor<T> summarize(const BasicTensor<T>& instances);

// sigmoid(w4 relu(w3 V + b3) + b4).
template <class T>
SignificanceVector<T> weigh(const BasicTensor<T>& summary, const ParameterSet<T>& params);

// sum_k a_k F^k.
template <class T>
BasicTensor<T> combine(const SignificanceVector<T>& significance, const BasicTensor<T>& instances);

template <class T>
std::pair<ClassRepresentation<T>, SignificanceVector<T>> class_representation(
    const BasicTensor<T>& instances, const ParameterSet<T>& params, std::size_t class_id);

// Averaging baseline: the mean of the K representations.
template <class T>
ClassRepresentation<T> mean_prototype(const BasicTensor<T>& instances, std::size_t class_id);

}  // namespace icrl
