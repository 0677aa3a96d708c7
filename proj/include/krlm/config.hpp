// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: flat `key value` (or `key = value`) text, environment
// overrides with the KRLM_ prefix, and command-line flags, applied in that
// order over the built-in defaults.

#pragma once

#include "krlm/evaluator.hpp"
#include "krlm/model.hpp"
#include "krlm/trainer.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace krlm {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  Protocol protocol = Protocol::filtered;
  Precision precision = Precision::f64;
  int jobs = 1;
  int limit = 0;  // evaluation triplets; 0: all
  std::uint64_t seed = 0;

  std::filesystem::path data;        // dataset directory (prepare)
  std::filesystem::path work;        // prepared cache directory
  std::filesystem::path out;         // output directory
  std::filesystem::path checkpoint;  // checkpoint to evaluate, inspect or fine-tune from

  // Keys given by a file, the environment or a flag rather than defaulted.
  std::set<std::string> explicit_keys;

  // Propagates the run seed into the model and trainer.
  void finalize();
  void validate() const;
  nlohmann::json to_json() const;
};

// Every accepted key, in documentation order.
const std::vector<std::string>& config_keys();

// Sets one key; throws UsageError naming the key on unknown keys or bad values.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);

// Applies a config file's text. Duplicate keys keep the last value and add a
// warning line.
void apply_config_text(RunConfig& cfg, std::string_view text, std::vector<std::string>* warnings = nullptr);

// KRLM_MEMORY_K=0 sets memory-k. Names are the keys upper-cased with '-' -> '_'.
void apply_environment(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& env);
std::vector<std::pair<std::string, std::string>> krlm_environment();

// defaults < file < environment < flags.
RunConfig parse_config(const std::filesystem::path& file, const std::vector<std::pair<std::string, std::string>>& env,
                       const std::vector<std::pair<std::string, std::string>>& flags,
                       std::vector<std::string>* warnings = nullptr);

std::string_view precision_name(Precision p);

}  // namespace krlm
