#pragma once

#include <string>

#include "lora2/trainer.hpp"

namespace lora2 {

// Flat key=value text form of TrainConfig. Unknown, duplicate, or missing
// keys are errors; parse(serialize(c)) == c.
std::string serialize_config(const TrainConfig& config);
TrainConfig parse_config(const std::string& text);

TrainConfig load_config_file(const std::string& path);
void save_config_file(const TrainConfig& config, const std::string& path);

} // namespace lora2
