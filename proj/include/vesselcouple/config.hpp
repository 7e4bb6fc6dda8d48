#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "vesselcouple/model.hpp"
#include "vesselcouple/superpixel.hpp"
#include "vesselcouple/trainer.hpp"

namespace vesselcouple {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything a training run needs besides the data.
struct RunConfig {
  NetConfig net;
  TrainConfig train;
  SlicConfig slic;
  double val_fraction = 0.2;
  bool fast = false;

  void validate() const;
};

/// Flat "section.key" -> raw value text. Accepts
///   # comment
///   [section]
///   key = value        (numbers, true/false, "quoted strings")
std::map<std::string, std::string> parse_config_text(const std::string& text);

/// Applies parsed keys on top of `cfg`; unknown keys and malformed values
/// raise ConfigError.
void apply_config(RunConfig& cfg, const std::map<std::string, std::string>& values);

RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Fully resolved config in the same format; parsing it back reproduces
/// `cfg` exactly.
std::string format_config(const RunConfig& cfg);

}  // namespace vesselcouple
