#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "icrl/abfe.hpp"
#include "icrl/airn.hpp"
#include "icrl/backbone.hpp"
#include "icrl/head.hpp"
#include "icrl/params.hpp"

namespace icrl {

struct ModelConfig {
  BackboneConfig backbone;
  PoolingVariant pooling = PoolingVariant::kFull;
  bool use_airn = true;
  std::size_t shots = 5;        // K the AIRN weights are shaped for
  std::size_t airn_hidden = 0;  // 0 selects airn_hidden_width(shots)
  bool zero_init_airn = false;
  double tau = 10.0;
  bool learn_tau = false;
  // Every image is standardized as (x - input_mean) / input_std before the backbone.
  double input_mean = 0.5;
  double input_std = 0.25;

  std::size_t hidden_width() const { return airn_hidden ? airn_hidden : airn_hidden_width(shots); }
  std::size_t embedding_dim() const { return icrl::embedding_dim(backbone, pooling); }
  void validate() const;

  template <class T>
  void standardize(std::vector<T>& image) const {
    const T mean = static_cast<T>(input_mean), inv = static_cast<T>(1.0 / input_std);
    for (T& v : image) v = (v - mean) * inv;
  }

  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);
};

template <class T>
struct Model {
  ModelConfig config;
  ParameterSet<T> params;

  template <class U>
  Model<U> cast() const {
    return Model<U>{config, params.template cast<U>()};
  }

  // Temperature as a one-element tensor (the learnable head.tau when enabled).
  BasicTensor<T> temperature() const {
    if (config.learn_tau) return params.get("head.tau");
    return BasicTensor<T>::scalar(static_cast<T>(config.tau));
  }
};

// Backbone, extractor, AIRN (when enabled) and optional learnable temperature.
Model<float> build_model(const ModelConfig& config, std::uint64_t seed);

}  // namespace icrl
