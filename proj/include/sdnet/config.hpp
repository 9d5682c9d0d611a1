#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <ostream>
#include <string>

#include "sdnet/trainer.hpp"

namespace sdnet {

/// Flat `key = value` document. Lines starting with '#' are comments; keys
/// use dots for grouping (`optimizer.lr`, `arch.base_width`, ...).
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::istream& in);
KeyValues read_config_file(const std::filesystem::path& path);
void write_key_values(std::ostream& out, const KeyValues& kv);

/// Applies one `key=value` override; later overrides win.
void apply_override(KeyValues& kv, const std::string& assignment);

/// Every TrainConfig field under its config key. Floating-point values use
/// the shortest round-trip representation.
KeyValues to_key_values(const TrainConfig& config);
/// Starts from the defaults and applies `kv`. Unknown keys and malformed
/// values raise ConfigError.
TrainConfig train_config_from(const KeyValues& kv);

}  // namespace sdnet
