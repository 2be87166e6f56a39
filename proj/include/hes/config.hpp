#pragma once

// JSON experiment configuration. The schema and every default are listed in
// docs/config.md.

#include <filesystem>
#include <functional>
#include <string>

#include "hes/scenario.hpp"

namespace hes {

/// Receives one line per default that was applied for an absent key.
using ConfigLog = std::function<void(const std::string&)>;

/// Parses and validates a configuration document. Throws ConfigError naming
/// the line/column of a syntax error, the path of an unknown key, or the
/// field and constraint that failed validation.
ExperimentConfig parse_config_text(const std::string& text, const ConfigLog& log = {},
                                   const std::string& source = "<config>");

ExperimentConfig parse_config(const std::filesystem::path& path, const ConfigLog& log = {});

/// Full configuration as JSON, every key present. parse_config_text of the
/// result yields an equal config.
std::string serialize_config(const ExperimentConfig& config);

}  // namespace hes
