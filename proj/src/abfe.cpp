#include "icrl/abfe.hpp"

#include <cmath>
#include <random>

#include "icrl/errors.hpp"
#include "icrl/ops.hpp"

namespace icrl {

namespace {

bool uses_w1(PoolingVariant v) {
  return v == PoolingVariant::kFull || v == PoolingVariant::kGlobalAverage ||
         v == PoolingVariant::kNoAttention || v == PoolingVariant::kSingleProjection;
}

bool uses_w2(PoolingVariant v) {
  return v == PoolingVariant::kFull || v == PoolingVariant::kGlobalAverage ||
         v == PoolingVariant::kNoAttention;
}

bool uses_attention(PoolingVariant v) {
  return v == PoolingVariant::kFull || v == PoolingVariant::kNoProjection ||
         v == PoolingVariant::kSingleProjection;
}

template <class T>
BasicTensor<T> project(const FeatureMap<T>& feature, const ParameterSet<T>& params,
                       const std::string& name) {
  return conv2d(feature, params.get(name + ".weight"), params.get(name + ".bias"), 1, 0);
}

}  // namespace

std::string_view to_string(PoolingVariant variant) {
  switch (variant) {
    case PoolingVariant::kFull: return "full";
    case PoolingVariant::kGlobalAverage: return "model-1";
    case PoolingVariant::kNoAttention: return "model-2";
    case PoolingVariant::kNoProjection: return "model-3";
    case PoolingVariant::kSingleProjection: return "model-4";
    case PoolingVariant::kNaiveBilinear: return "model-5";
  }
  return "full";
}

PoolingVariant parse_pooling(std::string_view text) {
  if (text == "full") return PoolingVariant::kFull;
  if (text == "model-1") return PoolingVariant::kGlobalAverage;
  if (text == "model-2") return PoolingVariant::kNoAttention;
  if (text == "model-3") return PoolingVariant::kNoProjection;
  if (text == "model-4") return PoolingVariant::kSingleProjection;
  if (text == "model-5") return PoolingVariant::kNaiveBilinear;
  throw ConfigError("unknown pooling variant '" + std::string(text) +
                    "' (expected full or model-1..model-5)");
}

std::size_t embedding_dim(const BackboneConfig& backbone, PoolingVariant variant) {
  const std::size_t d = backbone.channels;
  const std::size_t s = backbone.feature_size();
  switch (variant) {
    case PoolingVariant::kNoAttention: return d * s * s;
    case PoolingVariant::kNaiveBilinear: return d * d;
    default: return d;
  }
}

void init_abfe_params(ParameterSet<float>& params, std::size_t channels, PoolingVariant variant,
                      Rng& rng) {
  if (variant == PoolingVariant::kNaiveBilinear && channels > kMaxBilinearChannels) {
    throw ConfigError("model-5 pooling needs at most " + std::to_string(kMaxBilinearChannels) +
                      " channels, backbone has " + std::to_string(channels));
  }
  const std::size_t d = channels;
  const float bound = 1.0f / std::sqrt(static_cast<float>(d));
  std::uniform_real_distribution<float> dist(-bound, bound);
  auto projection = [&](const char* name) {
    std::vector<float> w(d * d);
    for (float& v : w) v = dist(rng);
    params.add(std::string(name) + ".weight", Tensor({d, d, 1, 1}, std::move(w), true));
    params.add(std::string(name) + ".bias", Tensor::zeros({d}, true));
  };
  if (uses_w1(variant)) projection("abfe.w1");
  if (uses_w2(variant)) projection("abfe.w2");
  if (uses_attention(variant)) {
    params.add("abfe.ws.weight", Tensor::zeros({1, d, 1, 1}, true));
    params.add("abfe.ws.bias", Tensor::zeros({1}, true));
  }
}

template <class T>
BasicTensor<T> bilinear_intermediate(const FeatureMap<T>& feature, const ParameterSet<T>& params,
                                     PoolingVariant variant) {
  if (!feature.defined() || feature.rank() != 3) {
    throw ContractError("bilinear_intermediate: expected a d x h x w feature map");
  }
  switch (variant) {
    case PoolingVariant::kNoProjection:
    case PoolingVariant::kNaiveBilinear:
      return feature;
    case PoolingVariant::kSingleProjection:
      return hadamard(project(feature, params, "abfe.w1"), feature);
    default:
      return hadamard(project(feature, params, "abfe.w1"), project(feature, params, "abfe.w2"));
  }
}

template <class T>
BasicTensor<T> attention_weights(const BasicTensor<T>& intermediate,
                                 const ParameterSet<T>& params) {
  const BasicTensor<T> logits = conv2d(intermediate, params.get("abfe.ws.weight"),
                                       params.get("abfe.ws.bias"), 1, 0);
  return reshape(sigmoid(logits), {logits.numel(), 1});
}

template <class T>
BasicTensor<T> attention_pool(const BasicTensor<T>& intermediate, const ParameterSet<T>& params) {
  const std::size_t d = intermediate.dim(0);
  const std::size_t hw = intermediate.dim(1) * intermediate.dim(2);
  const BasicTensor<T> flat = reshape(intermediate, {d, hw});
  return reshape(matmul(flat, attention_weights(intermediate, params)), {d});
}

template <class T>
BasicTensor<T> pool_features(const FeatureMap<T>& feature, const ParameterSet<T>& params,
                             PoolingVariant variant) {
  switch (variant) {
    case PoolingVariant::kGlobalAverage:
      return global_average_pool(bilinear_intermediate(feature, params, variant));
    case PoolingVariant::kNoAttention: {
      const BasicTensor<T> inter = bilinear_intermediate(feature, params, variant);
      return reshape(inter, {inter.numel()});
    }
    case PoolingVariant::kNaiveBilinear: {
      const std::size_t d = feature.dim(0);
      if (d > kMaxBilinearChannels) {
        throw ContractError("model-5 pooling is limited to " +
                            std::to_string(kMaxBilinearChannels) + " channels");
      }
      const std::size_t hw = feature.dim(1) * feature.dim(2);
      const BasicTensor<T> flat = reshape(feature, {d, hw});
      const BasicTensor<T> outer = scale(matmul(flat, transpose(flat)), 1.0 / hw);
      return reshape(outer, {d * d});
    }
    default:
      return attention_pool(bilinear_intermediate(feature, params, variant), params);
  }
}

template <class T>
BasicTensor<T> embed_instance(const BasicTensor<T>& image, const ParameterSet<T>& params,
                              const BackboneConfig& backbone, PoolingVariant variant) {
  return l2_normalize(pool_features(backbone_forward(image, params, backbone), params, variant));
}

#define ICRL_INSTANTIATE_ABFE(T)                                                              \
  template BasicTensor<T> bilinear_intermediate(const FeatureMap<T>&, const ParameterSet<T>&, \
                                                PoolingVariant);                              \
  template BasicTensor<T> attention_weights(const BasicTensor<T>&, const ParameterSet<T>&);   \
  template BasicTensor<T> attention_pool(const BasicTensor<T>&, const ParameterSet<T>&);      \
  template BasicTensor<T> pool_features(const FeatureMap<T>&, const ParameterSet<T>&,         \
                                        PoolingVariant);                                      \
  template BasicTensor<T> embed_instance(const BasicTensor<T>&, const ParameterSet<T>&,       \
                                         const BackboneConfig&, PoolingVariant);

ICRL_INSTANTIATE_ABFE(float)
ICRL_INSTANTIATE_ABFE(double)

#undef ICRL_INSTANTIATE_ABFE

}  // namespace icrl
