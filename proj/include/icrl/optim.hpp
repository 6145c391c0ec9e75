#pragma once

#include <span>
#include <string>
#include <vector>

#include "icrl/errors.hpp"
#include "icrl/tensor.hpp"

namespace icrl {

// Velocity buffers for one parameter group, plus its hyper-parameters.
template <class T>
struct BasicOptimizerState {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool nesterov = true;
  std::vector<std::vector<T>> velocity;  // one buffer per parameter, by position
};

using OptimizerState = BasicOptimizerState<float>;

// One SGD step over `params` (which must keep the same order between calls).
// With g' = g + weight_decay * p, the velocity lives in parameter units:
//
//   v <- momentum * v - lr * g'
//   p <- p + momentum * v - lr * g'     (nesterov)
//   p <- p + v                          (classical momentum)
//
// Under a constant learning rate this is the same trajectory as the
// buffer form b <- momentum * b + g', p <- p - lr * (g' + momentum * b).
template <class T>
void sgd_step(std::span<BasicTensor<T>> params, BasicOptimizerState<T>& state) {
  if (state.velocity.size() < params.size()) state.velocity.resize(params.size());
  const T lr = static_cast<T>(state.learning_rate);
  const T mu = static_cast<T>(state.momentum);
  const T wd = static_cast<T>(state.weight_decay);
  for (std::size_t k = 0; k < params.size(); ++k) {
    BasicTensor<T>& p = params[k];
    if (!p.has_grad()) {
      throw ContractError("sgd_step: parameter " + std::to_string(k) + " of shape " +
                          shape_str(p.shape()) + " has no gradient");
    }
    auto& v = state.velocity[k];
    if (v.empty()) v.assign(p.numel(), T(0));
    if (v.size() != p.numel()) throw ContractError("sgd_step: velocity buffer shape changed");
    std::span<T> value = p.mutable_data();
    std::span<const T> grad = p.grad();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const T g = grad[i] + wd * value[i];
      v[i] = mu * v[i] - lr * g;
      value[i] += state.nesterov ? mu * v[i] - lr * g : v[i];
    }
  }
}

}  // namespace icrl
