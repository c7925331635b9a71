#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ddspseg/train.hpp"

namespace ddspseg::config {

/// Bad configuration text: syntax, unknown keys or unparsable values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything the synth, train and ablate commands read from a run file.
struct RunConfig {
  train::TrainConfig train;
  int cases = 4;  // synth: number of cases written
  train::AblationTable table = train::AblationTable::table2;
  std::vector<std::uint64_t> seeds{0};
  int jobs = 1;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// One `key = value` per line; blank lines and `#` comments are skipped.
/// Duplicate keys are an error.
KeyValues parse_key_values(std::string_view text);
KeyValues read_key_values(const std::filesystem::path& path);

/// Applies pairs on top of `base`. Unknown keys are collected and reported
/// together in one ConfigError. The result is validated.
RunConfig apply(const KeyValues& kv, RunConfig base = {});

/// Every key with its resolved value, in documentation order. Feeding the
/// output back through apply() reproduces the configuration.
KeyValues resolved(const RunConfig& cfg);
std::string to_text(const KeyValues& kv);

/// Documented key names, in the order resolved() emits them.
const std::vector<std::string>& known_keys();

}  // namespace ddspseg::config
