#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "icrl/backbone.hpp"
#include "icrl/params.hpp"
#include "icrl/rng.hpp"
#include "icrl/tensor.hpp"

namespace icrl {

// Extractor variants used by the pooling ablation.
enum class PoolingVariant {
  kFull,              // (w1*f) . (w2*f), sigmoid attention pooling
  kGlobalAverage,     // model-1: global average pooling replaces attention pooling
  kNoAttention,       // model-2: attention pooling removed, intermediate map flattened
  kNoProjection,      // model-3: both 1x1 convs removed, intermediate = f
  kSingleProjection,  // model-4: one 1x1 conv, intermediate = (w1*f) . f
  kNaiveBilinear,     // model-5: mean outer product f f^T over positions, d*d descriptor
};

std::string_view to_string(PoolingVariant variant);
PoolingVariant parse_pooling(std::string_view text);  // "full" or "model-1".."model-5"

// Largest channel count for which the d*d naive bilinear descriptor is allowed.
inline constexpr std::size_t kMaxBilinearChannels = 64;

// Length of the instance representation produced by `variant`.
std::size_t embedding_dim(const BackboneConfig& backbone, PoolingVariant variant);

// Creates only the tensors the variant reads: abfe.w1/w2 (d x d x 1 x 1, fan-in
// uniform) and abfe.ws (1 x d x 1 x 1, zero so attention starts at 0.5
// everywhere), each with a zero bias.
void init_abfe_params(ParameterSet<float>& params, std::size_t channels, PoolingVariant variant,
                      Rng& rng);

// h^ = (w1 * f) . (w2 * f) with * a 1x1 convolution (model-3/4 drop one or
// both projections).
template <class T>
BasicTensor<T> bilinear_intermediate(const FeatureMap<T>& feature, const ParameterSet<T>& params,
                                     PoolingVariant variant = PoolingVariant::kFull);

// A_s = sigmoid(ws * h^), flattened to hw entries.
template <class T>
BasicTensor<T> attention_weights(const BasicTensor<T>& intermediate, const ParameterSet<T>& params);

// reshape(h^, d x hw) . A_s. The weights are not normalized.
template <class T>
BasicTensor<T> attention_pool(const BasicTensor<T>& intermediate, const ParameterSet<T>& params);

// Pre-normalization descriptor of one feature map under `variant`.
template <class T>
BasicTensor<T> pool_features(const FeatureMap<T>& feature, const ParameterSet<T>& params,
                             PoolingVariant variant);

// Unit-norm instance representation; the same path serves support and query.
template <class T>
BasicTensor<T> embed_instance(const BasicTensor<T>& image, const ParameterSet<T>& params,
                              const BackboneConfig& backbone,
                              PoolingVariant variant = PoolingVariant::kFull);

}  // namespace icrl
