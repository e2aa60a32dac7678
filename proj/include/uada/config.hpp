#ifndef UADA_CONFIG_HPP
#define UADA_CONFIG_HPP

// Config (de)serialization. Files are either a JSON object or flat
// `key = value` lines (dotted keys address nested objects, '#' starts a
// comment). Missing keys take defaults; unknown keys are a ConfigError.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "uada/phantom_data.hpp"

namespace uada {

struct TrainConfig;

nlohmann::json parse_config_text(const std::string& text);
nlohmann::json read_config_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

nlohmann::json to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// If `j` has a `section` object member, returns it; otherwise `j` itself.
nlohmann::json section_or_self(const nlohmann::json& j, const char* section);

}  // namespace uada

#endif  // UADA_CONFIG_HPP
