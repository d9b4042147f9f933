// Model checkpointing: JSON manifest (config + tensor index) + raw f64 blob.
// Round trips are bit exact.
#pragma once

#include <string>

#include <json.hpp>

#include "tracebench/model.hpp"

namespace tb::model {

nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j);

// extra_meta is merged into the manifest (tool version, seed, ...).
void save_checkpoint(const Seq2SeqModel& m, const std::string& path,
                     const nlohmann::json& extra_meta = nlohmann::json::object());

Seq2SeqModel load_checkpoint(const std::string& path);

}  // namespace tb::model
