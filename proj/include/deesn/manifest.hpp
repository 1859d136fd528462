#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

namespace deesn {

inline constexpr const char* kVersion = "0.1.0";
inline const std::string kVersionString = kVersion;

// FNV-1a over the compact dump of `config`, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

// {"software", "version", "config_hash", "config"} plus whatever the caller adds.
nlohmann::json make_manifest(const nlohmann::json& config);

void save_json(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json load_json(const std::filesystem::path& path);

}  // namespace deesn
