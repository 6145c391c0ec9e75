#include "icrl/model.hpp"

#include <string>

#include "icrl/errors.hpp"
#include "icrl/rng.hpp"

namespace icrl {

namespace {

std::size_t get_size(const std::map<std::string, std::string>& kv, const std::string& key,
                     std::size_t fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("checkpoint field " + key + " is not an unsigned integer: '" + it->second + "'");
  }
}

double get_double(const std::map<std::string, std::string>& kv, const std::string& key,
                  double fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw ConfigError("checkpoint field " + key + " is not a number: '" + it->second + "'");
  }
}

bool get_bool(const std::map<std::string, std::string>& kv, const std::string& key, bool fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  if (it->second == "on" || it->second == "true" || it->second == "1") return true;
  if (it->second == "off" || it->second == "false" || it->second == "0") return false;
  throw ConfigError("checkpoint field " + key + " is not a boolean: '" + it->second + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void ModelConfig::validate() const {
  backbone.validate();
  if (shots == 0) throw ConfigError("model: shots must be positive");
  if (!(tau > 0.0)) throw ConfigError("model: tau must be positive");
  if (!(input_std > 0.0)) throw ConfigError("model: input_std must be positive");
  if (pooling == PoolingVariant::kNaiveBilinear && backbone.channels > kMaxBilinearChannels) {
    throw ConfigError("model-5 pooling needs at most " + std::to_string(kMaxBilinearChannels) +
                      " channels");
  }
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {
      {"model.blocks", std::to_string(backbone.blocks)},
      {"model.channels", std::to_string(backbone.channels)},
      {"model.input_size", std::to_string(backbone.input_size)},
      {"model.input_channels", std::to_string(backbone.input_channels)},
      {"model.pool_window", std::to_string(backbone.pool_window)},
      {"model.pooling", std::string(to_string(pooling))},
      {"model.airn", use_airn ? "on" : "off"},
      {"model.shots", std::to_string(shots)},
      {"model.airn_hidden", std::to_string(hidden_width())},
      {"model.tau", fmt_double(tau)},
      {"model.learn_tau", learn_tau ? "on" : "off"},
      {"model.input_mean", fmt_double(input_mean)},
      {"model.input_std", fmt_double(input_std)},
  };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  c.backbone.blocks = get_size(kv, "model.blocks", c.backbone.blocks);
  c.backbone.channels = get_size(kv, "model.channels", c.backbone.channels);
  c.backbone.input_size = get_size(kv, "model.input_size", c.backbone.input_size);
  c.backbone.input_channels = get_size(kv, "model.input_channels", c.backbone.input_channels);
  c.backbone.pool_window = get_size(kv, "model.pool_window", c.backbone.pool_window);
  if (auto it = kv.find("model.pooling"); it != kv.end()) c.pooling = parse_pooling(it->second);
  c.use_airn = get_bool(kv, "model.airn", c.use_airn);
  c.shots = get_size(kv, "model.shots", c.shots);
  c.airn_hidden = get_size(kv, "model.airn_hidden", 0);
  c.tau = get_double(kv, "model.tau", c.tau);
  c.learn_tau = get_bool(kv, "model.learn_tau", c.learn_tau);
  c.input_mean = get_double(kv, "model.input_mean", c.input_mean);
  c.input_std = get_double(kv, "model.input_std", c.input_std);
  c.validate();
  return c;
}

Model<float> build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model<float> model{config, {}};
  Rng backbone_rng = make_rng(seed, "init.backbone");
  init_backbone_params(model.params, config.backbone, backbone_rng);
  Rng abfe_rng = make_rng(seed, "init.abfe");
  init_abfe_params(model.params, config.backbone.channels, config.pooling, abfe_rng);
  if (config.use_airn) {
    Rng airn_rng = make_rng(seed, "init.airn");
    init_airn_params(model.params, config.shots, config.hidden_width(), airn_rng,
                     config.zero_init_airn);
  }
  if (config.learn_tau) {
    model.params.add("head.tau", Tensor::scalar(static_cast<float>(config.tau), true));
  }
  return model;
}

}  // namespace icrl
