#pragma once

#include "json.hpp"
#include "teaser/model.hpp"
#include "teaser/objectives.hpp"
#include "teaser/synthetic.hpp"

// JSON mapping of the configuration structs. Readers start from the
// defaults, accept partial objects and reject unknown keys.
namespace teaser {

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const LossConfig& c);
nlohmann::json to_json(const SyntheticTaskConfig& c);

ModelConfig model_config_from_json(const nlohmann::json& j);
LossConfig loss_config_from_json(const nlohmann::json& j);
SyntheticTaskConfig synthetic_config_from_json(const nlohmann::json& j);

} // namespace teaser
