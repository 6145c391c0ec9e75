#include "icrl/backbone.hpp"

#include <cmath>
#include <random>
#include <string>

#include "icrl/errors.hpp"
#include "icrl/ops.hpp"

namespace icrl {

namespace {
std::string conv_name(std::size_t block, const char* field) {
  return "backbone.conv" + std::to_string(block) + "." + field;
}
}  // namespace

void BackboneConfig::validate() const {
  if (blocks == 0 || channels == 0 || input_channels == 0 || input_size == 0) {
    throw ConfigError("backbone: blocks, channels and sizes must be positive");
  }
  if (pool_window < 1) throw ConfigError("backbone: pooling window must be positive");
  std::size_t size = input_size;
  for (std::size_t b = 0; b < blocks; ++b) {
    if (size % pool_window != 0) {
      throw ConfigError("backbone: input size " + std::to_string(input_size) +
                        " is not divisible by pool_window^blocks");
    }
    size /= pool_window;
  }
}

std::size_t BackboneConfig::feature_size() const {
  std::size_t size = input_size;
  for (std::size_t b = 0; b < blocks; ++b) size /= pool_window;
  return size;
}

void init_backbone_params(ParameterSet<float>& params, const BackboneConfig& config, Rng& rng) {
  config.validate();
  std::size_t in = config.input_channels;
  for (std::size_t b = 0; b < config.blocks; ++b) {
    const std::size_t out = config.channels;
    const double fan_in = static_cast<double>(in * 9);
    std::normal_distribution<float> dist(0.0f, static_cast<float>(std::sqrt(2.0 / fan_in)));
    std::vector<float> w(out * in * 9);
    for (float& v : w) v = dist(rng);
    params.add(conv_name(b, "weight"), Tensor({out, in, 3, 3}, std::move(w), true));
    params.add(conv_name(b, "bias"), Tensor::zeros({out}, true));
    in = out;
  }
}

template <class T>
FeatureMap<T> backbone_forward(const BasicTensor<T>& image, const ParameterSet<T>& params,
                               const BackboneConfig& config) {
  if (!image.defined() || image.shape() != config.input_shape()) {
    throw ContractError("backbone_forward: expected image " + shape_str(config.input_shape()) +
                        ", got " + (image.defined() ? shape_str(image.shape()) : "<undefined>"));
  }
  BasicTensor<T> x = image;
  for (std::size_t b = 0; b < config.blocks; ++b) {
    x = conv2d(x, params.get(conv_name(b, "weight")), params.get(conv_name(b, "bias")), 1, 1);
    x = relu(x);
    x = maxpool2d(x, config.pool_window, config.pool_window);
  }
  return x;
}

void init_pretrain_head(ParameterSet<float>& params, std::size_t feature_dim, std::size_t classes,
                        Rng& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(feature_dim));
  std::uniform_real_distribution<float> dist(-bound, bound);
  std::vector<float> w(feature_dim * classes);
  for (float& v : w) v = dist(rng);
  params.add("pretrain.head.weight", Tensor({feature_dim, classes}, std::move(w), true));
  params.add("pretrain.head.bias", Tensor::zeros({1, classes}, true));
}

template <class T>
BasicTensor<T> global_average_pool(const FeatureMap<T>& feature) {
  if (feature.rank() != 3) throw ContractError("global_average_pool: expected d x h x w");
  const std::size_t d = feature.dim(0);
  return reduce_mean(reshape(feature, {d, feature.dim(1) * feature.dim(2)}), 1);
}

template <class T>
BasicTensor<T> pretrain_head_forward(const FeatureMap<T>& feature, const ParameterSet<T>& params) {
  const BasicTensor<T>& weight = params.get("pretrain.head.weight");
  const BasicTensor<T> pooled = global_average_pool(feature);
  if (pooled.numel() != weight.dim(0)) {
    throw ContractError("pretrain_head_forward: head expects " + std::to_string(weight.dim(0)) +
                        " features, map has " + std::to_string(pooled.numel()));
  }
  return add(matmul(reshape(pooled, {1, pooled.numel()}), weight),
             params.get("pretrain.head.bias"));
}

#define ICRL_INSTANTIATE_BACKBONE(T)                                                         \
  template FeatureMap<T> backbone_forward(const BasicTensor<T>&, const ParameterSet<T>&,     \
                                          const BackboneConfig&);                            \
  template BasicTensor<T> global_average_pool(const FeatureMap<T>&);                         \
  template BasicTensor<T> pretrain_head_forward(const FeatureMap<T>&, const ParameterSet<T>&);

ICRL_INSTANTIATE_BACKBONE(float)
ICRL_INSTANTIATE_BACKBONE(double)

#undef ICRL_INSTANTIATE_BACKBONE

}  // namespace icrl
