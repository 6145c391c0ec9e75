#pragma once

#include <cstddef>

#include "icrl/params.hpp"
#include "icrl/rng.hpp"
#include "icrl/tensor.hpp"

namespace icrl {

// ConvNet-style stack: `blocks` x [conv 3x3 pad 1 -> ReLU -> maxpool].
struct BackboneConfig {
  std::size_t blocks = 4;
  std::size_t channels = 32;
  std::size_t input_size = 32;
  std::size_t input_channels = 3;
  std::size_t pool_window = 2;

  void validate() const;
  std::size_t feature_size() const;  // spatial extent of the output map
  Shape input_shape() const { return {input_channels, input_size, input_size}; }
  Shape feature_shape() const { return {channels, feature_size(), feature_size()}; }
};

// d x h x w output of the backbone.
template <class T>
using FeatureMap = BasicTensor<T>;

// He (fan-in) normal kernels, zero biases. Names: backbone.conv{i}.weight/bias.
void init_backbone_params(ParameterSet<float>& params, const BackboneConfig& config, Rng& rng);

template <class T>
FeatureMap<T> backbone_forward(const BasicTensor<T>& image, const ParameterSet<T>& params,
                               const BackboneConfig& config);

// Linear classifier over all base classes, used only during pre-training.
// Names: pretrain.head.weight (d x classes), pretrain.head.bias (1 x classes).
void init_pretrain_head(ParameterSet<float>& params, std::size_t feature_dim,
                        std::size_t classes, Rng& rng);

// Global average pool to R^d, then affine map; returns 1 x classes logits.
template <class T>
BasicTensor<T> pretrain_head_forward(const FeatureMap<T>& feature, const ParameterSet<T>& params);

// Spatial mean of a d x h x w map.
template <class T>
BasicTensor<T> global_average_pool(const FeatureMap<T>& feature);

}  // namespace icrl
