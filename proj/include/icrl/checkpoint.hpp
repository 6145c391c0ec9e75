#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "icrl/model.hpp"

namespace icrl {

// Parameters plus the model configuration and the training configuration
// that produced them, stored as key=value text.
struct Checkpoint {
  Model<float> model;
  std::map<std::string, std::string> train;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Exact equality of configuration, parameter names, shapes and values.
bool same_parameters(const Model<float>& a, const Model<float>& b);

}  // namespace icrl
