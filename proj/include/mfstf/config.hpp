#pragma once

// JSON run configuration. Every field has a documented default; unknown keys
// are rejected and numeric constraints are validated at parse time.

#include <string>

#include "mfstf/train.hpp"

namespace mfstf {

struct RunConfig {
  TrainConfig train;
  std::string data;  // optional paths; command-line flags take precedence
  std::string out;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

/// The defaults, serialized (the reference for the documented schema).
std::string default_config_json();

}  // namespace mfstf
