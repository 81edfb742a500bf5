#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dpsr/model.hpp"
#include "dpsr/stream.hpp"
#include "dpsr/train.hpp"

namespace dpsr {

// Everything a run can be configured with. Defaults are the published
// DPSR settings (F=280, N=16, K=4, f=64, r=4) and training protocol.
struct RunConfig {
  DpsrConfig model;
  TrainConfig train;
  double budget_ms = kPrismaLineMs;
};

// Known keys, in echo order.
const std::vector<std::string>& config_keys();

// Sets one key from its text value. Unknown keys and unparsable values
// throw ConfigError carrying the key and `line` (0 when not from a file).
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value, int line = 0);

// Strict "key = value" text: one pair per line, '#' comments, blank lines
// ignored, duplicate keys rejected.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

// Resolved configuration in the same format parse_config reads.
std::string config_to_text(const RunConfig& cfg);

}  // namespace dpsr
