#include "icrl/airn.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "icrl/errors.hpp"
#include "icrl/ops.hpp"

namespace icrl {

namespace {
template <class T>
void require_instances(const BasicTensor<T>& instances, const char* op) {
  if (!instances.defined() || instances.rank() != 2 || instances.dim(0) == 0 ||
      instances.dim(1) == 0) {
    throw ContractError(std::string(op) + ": expected a non-empty K x d support set");
  }
}
}  // namespace

std::size_t airn_hidden_width(std::size_t shots) { return std::max<std::size_t>(4, 4 * shots); }

void init_airn_params(ParameterSet<float>& params, std::size_t shots, std::size_t hidden, Rng& rng,
                      bool zero_init) {
  if (shots == 0 || hidden == 0) throw ConfigError("airn: shots and hidden width must be positive");
  auto dense = [&](const char* name, std::size_t out, std::size_t in) {
    std::vector<float> w(out * in, 0.0f);
    if (!zero_init) {
      const float bound = 1.0f / std::sqrt(static_cast<float>(in));
      std::uniform_real_distribution<float> dist(-bound, bound);
      for (float& v : w) v = dist(rng);
    }
    params.add(std::string(name) + ".weight", Tensor({out, in}, std::move(w), true));
    params.add(std::string(name) + ".bias", Tensor::zeros({out, 1}, true));
  };
  dense("airn.w3", hidden, shots);
  dense("airn.w4", shots, hidden);
}

template <class T>
std::size_t airn_shots(const ParameterSet<T>& params) {
  return params.get("airn.w3.weight").dim(1);
}

template <class T>
BasicTensor<T> summarize(const BasicTensor<T>& instances) {
  require_instances(instances, "summarize");
  return reduce_mean(instances, 1);
}

template <class T>
SignificanceVector<T> weigh(const BasicTensor<T>& summary, const ParameterSet<T>& params) {
  const std::size_t shots = airn_shots(params);
  if (!summary.defined() || summary.numel() != shots) {
    throw ContractError("weigh: AIRN was built for K=" + std::to_string(shots) + ", got " +
                        (summary.defined() ? std::to_string(summary.numel()) : "nothing"));
  }
  BasicTensor<T> v = reshape(summary, {shots, 1});
  BasicTensor<T> hidden =
      relu(add(matmul(params.get("airn.w3.weight"), v), params.get("airn.w3.bias")));
  BasicTensor<T> out = sigmoid(add(matmul(params.get("airn.w4.weight"), hidden),
                                   params.get("airn.w4.bias")));
  return {reshape(out, {shots})};
}

template <class T>
BasicTensor<T> combine(const SignificanceVector<T>& significance, const BasicTensor<T>& instances) {
  require_instances(instances, "combine");
  const std::size_t k = instances.dim(0);
  if (significance.weights.numel() != k) {
    throw ContractError("combine: " + std::to_string(significance.weights.numel()) +
                        " weights for " + std::to_string(k) + " instances");
  }
  return reshape(matmul(reshape(significance.weights, {1, k}), instances), {instances.dim(1)});
}

template <class T>
std::pair<ClassRepresentation<T>, SignificanceVector<T>> class_representation(
    const BasicTensor<T>& instances, const ParameterSet<T>& params, std::size_t class_id) {
  require_instances(instances, "class_representation");
  SignificanceVector<T> significance = weigh(summarize(instances), params);
  ClassRepresentation<T> rep{combine(significance, instances), class_id};
  return {std::move(rep), std::move(significance)};
}

template <class T>
ClassRepresentation<T> mean_prototype(const BasicTensor<T>& instances, std::size_t class_id) {
  require_instances(instances, "mean_prototype");
  return {reduce_mean(instances, 0), class_id};
}

#define ICRL_INSTANTIATE_AIRN(T)                                                              \
  template std::size_t airn_shots(const ParameterSet<T>&);                                    \
  template BasicTensor<T> summarize(const BasicTensor<T>&);                                   \
  template SignificanceVector<T> weigh(const BasicTensor<T>&, const ParameterSet<T>&);        \
  template BasicTensor<T> combine(const SignificanceVector<T>&, const BasicTensor<T>&);       \
  template std::pair<ClassRepresentation<T>, SignificanceVector<T>> class_representation(     \
      const BasicTensor<T>&, const ParameterSet<T>&, std::size_t);                            \
  template ClassRepresentation<T> mean_prototype(const BasicTensor<T>&, std::size_t);

ICRL_INSTANTIATE_AIRN(float)
ICRL_INSTANTIATE_AIRN(double)

#undef ICRL_INSTANTIATE_AIRN

}  // namespace icrl
