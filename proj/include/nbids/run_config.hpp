#pragma once

// Flat key=value run configuration shared by every CLI command.

#include "nbids/model.hpp"
#include "nbids/training.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace nbids {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string data_dir;
  std::string device_filter;
  std::size_t per_class = 10000;
  double test_fraction = 0.2;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

using KeyValues = std::map<std::string, std::string>;

/// `key = value` lines; blank lines and lines starting with '#' are skipped.
/// Malformed lines throw ConfigError naming `source` and the line number.
KeyValues parse_key_values(std::string_view content, const std::string& source);
KeyValues read_key_value_file(const std::filesystem::path& path);

KeyValues to_key_values(const RunConfig& cfg);
/// Overlays `kv` on `base`. Unknown keys throw ConfigError.
RunConfig apply_key_values(const RunConfig& base, const KeyValues& kv);
std::string render_key_values(const RunConfig& cfg);
void write_run_config(const std::filesystem::path& path, const RunConfig& cfg);

/// Resolves defaults, then the optional file, then the overrides.
RunConfig resolve_run_config(const std::filesystem::path* file, const KeyValues& overrides);

} // namespace nbids
