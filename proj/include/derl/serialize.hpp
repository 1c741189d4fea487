#pragma once

#include <memory>
#include <string>

#include "derl/model.hpp"

namespace derl {

uint64_t fnv1a(const std::string& s);

// Canonical key=value text form of a ModelConfig; its FNV-1a hash is embedded
// in model files so evaluation cannot silently run a mismatched architecture.
std::string model_config_text(const ModelConfig& cfg);
ModelConfig model_config_from_text(const std::string& text);

void save_model(const DerlModel& model, const std::string& path);

// Rebuilds the model from the embedded config and loads all parameters.
// Header or hash mismatches raise FormatError.
std::unique_ptr<DerlModel> load_model(const std::string& path);

}  // namespace derl
