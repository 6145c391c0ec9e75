#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "icrl/data.hpp"
#include "icrl/episodes.hpp"
#include "icrl/model.hpp"

namespace icrl {

// Everything a command needs, as flat key=value pairs. The backbone input
// shape is not configurable: it is taken from the dataset.
struct RunConfig {
  std::string dataset;
  std::string checkpoint;
  std::string out;
  std::string split;  // split file; empty means split by ratios with the run seed
  SplitRatios split_ratios;
  std::string eval_split = "test";
  std::size_t episodes = kDefaultEvalEpisodes;
  std::size_t threads = 1;
  bool from_scratch = false;

  ModelConfig model;
  TrainConfig train;
  SyntheticSpec synth;

  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  void validate() const;
};

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

// Every accepted key with its default, in documentation order.
const std::vector<ConfigKey>& config_keys();

// "key = value" lines; '#' starts a comment. Unknown keys are rejected.
void apply_config_text(RunConfig& config, std::string_view text, const std::string& origin = "config");
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace icrl
