#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "v1d3/domain.hpp"

namespace v1d3 {

/// Flat JSON object with exactly the EngineConfig field names. Missing keys keep
/// their defaults; unknown keys and wrongly typed values throw ConfigError.
EngineConfig engine_config_from_json(const nlohmann::json& doc);
nlohmann::json engine_config_to_json(const EngineConfig& cfg);

EngineConfig load_engine_config(const std::filesystem::path& path);
void save_engine_config(const EngineConfig& cfg, const std::filesystem::path& path);

/// Applies `<prefix><KEY>` environment variables (key upper-cased) on top of `cfg`.
/// Returns the number of overrides applied.
int apply_env_overrides(EngineConfig& cfg, const std::string& prefix = "V1D3_");

/// Sets one field from its textual form, as used by env overrides.
void set_engine_config_field(EngineConfig& cfg, const std::string& key, const std::string& text);

}  // namespace v1d3
