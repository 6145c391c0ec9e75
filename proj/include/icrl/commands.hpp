#pragma once

#include <ostream>

#include "icrl/checkpoint.hpp"
#include "icrl/config.hpp"

namespace icrl {

// Each command reads everything from the config and reports on `out`.
// Failures are thrown: ConfigError/IoError for bad input, ContractError or
// ParseError for violations found while running.
void cmd_synth(const RunConfig& config, std::ostream& out);
void cmd_pretrain(const RunConfig& config, std::ostream& out);
void cmd_meta_train(const RunConfig& config, std::ostream& out);
void cmd_eval(const RunConfig& config, std::ostream& out);
void cmd_inspect(const RunConfig& config, std::ostream& out);

// Helpers shared with the Python bindings.
SplitSpec resolve_split(const RunConfig& config, const DatasetContainer& data);
ModelConfig model_config_for(const RunConfig& config, const DatasetContainer& data);
// Fresh model from the run config, with every parameter the checkpoint
// shares copied over. An AIRN shaped for a different K is rejected.
Model<float> warm_start(const RunConfig& config, const DatasetContainer& data, const Checkpoint& from);

}  // namespace icrl
