// SPDX-License-Identifier: Apache-2.0

#include "krlm/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

extern char** environ;

namespace krlm {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const std::string v = trim(value);
  const char* first = v.data();
  const char* last = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (v.empty() || ec != std::errc() || ptr != last) {
    throw UsageError(fmt::format("config key '{}': cannot parse '{}' as {}", key, value,
                                 std::is_floating_point_v<T> ? "a number" : "an integer"));
  }
  return out;
}

int as_int(std::string_view k, std::string_view v) { return parse_number<int>(k, v); }
double as_double(std::string_view k, std::string_view v) { return parse_number<double>(k, v); }
std::uint64_t as_u64(std::string_view k, std::string_view v) { return parse_number<std::uint64_t>(k, v); }

using Setter = std::function<void(RunConfig&, std::string_view, std::string_view)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table = {
      // Backbone.
      {"backbone-layers", [](RunConfig& c, auto k, auto v) { c.model.backbone.layers = as_int(k, v); }},
      {"backbone-dim", [](RunConfig& c, auto k, auto v) { c.model.backbone.hidden = as_int(k, v); }},
      {"backbone-ffn", [](RunConfig& c, auto k, auto v) { c.model.backbone.ffn_inner = as_int(k, v); }},
      {"vocab-size", [](RunConfig& c, auto k, auto v) { c.model.backbone.vocab_size = as_int(k, v); }},
      {"max-seq-len", [](RunConfig& c, auto k, auto v) { c.model.backbone.max_seq_len = as_int(k, v); }},
      {"backbone-seed", [](RunConfig& c, auto k, auto v) { c.model.backbone.seed = as_u64(k, v); }},
      // Encoders and instruction.
      {"gnn-layers", [](RunConfig& c, auto k, auto v) { c.model.encoder.layers = as_int(k, v); }},
      {"gnn-dim", [](RunConfig& c, auto k, auto v) { c.model.encoder.hidden = as_int(k, v); }},
      {"vocab-items", [](RunConfig& c, auto k, auto v) { c.model.instruction.vocab_items = as_int(k, v); }},
      {"desc-tokens", [](RunConfig& c, auto k, auto v) { c.model.instruction.desc_tokens = as_int(k, v); }},
      {"memory-k", [](RunConfig& c, auto k, auto v) { c.model.memory_k = as_int(k, v); }},
      // Training.
      {"train-mode", [](RunConfig& c, auto, auto v) { c.train.mode = parse_train_mode(trim(v)); }},
      {"epochs", [](RunConfig& c, auto k, auto v) { c.train.epochs = as_int(k, v); }},
      {"steps-per-epoch", [](RunConfig& c, auto k, auto v) { c.train.steps_per_epoch = as_int(k, v); }},
      {"batch-size", [](RunConfig& c, auto k, auto v) { c.train.batch = as_int(k, v); }},
      {"negatives", [](RunConfig& c, auto k, auto v) { c.train.negatives = as_int(k, v); }},
      {"lambda", [](RunConfig& c, auto k, auto v) { c.train.lambda = as_double(k, v); }},
      {"bce-sign",
       [](RunConfig& c, auto k, auto v) {
         const std::string s = trim(v);
         if (s == "standard") {
           c.train.sign = BceSign::standard;
         } else if (s == "as-printed") {
           c.train.sign = BceSign::as_printed;
         } else {
           throw UsageError(fmt::format("config key '{}': expected standard or as-printed, got '{}'", k, s));
         }
       }},
      {"learning-rate", [](RunConfig& c, auto k, auto v) { c.train.optimizer.learning_rate = as_double(k, v); }},
      {"weight-decay", [](RunConfig& c, auto k, auto v) { c.train.optimizer.weight_decay = as_double(k, v); }},
      {"warmup", [](RunConfig& c, auto k, auto v) { c.train.optimizer.warmup_fraction = as_double(k, v); }},
      {"accumulation", [](RunConfig& c, auto k, auto v) { c.train.optimizer.accumulation = as_int(k, v); }},
      {"valid-every", [](RunConfig& c, auto k, auto v) { c.train.valid_every = as_int(k, v); }},
      {"valid-limit", [](RunConfig& c, auto k, auto v) { c.train.valid_limit = as_int(k, v); }},
      // Run.
      {"seed", [](RunConfig& c, auto k, auto v) { c.seed = as_u64(k, v); }},
      {"jobs", [](RunConfig& c, auto k, auto v) { c.jobs = as_int(k, v); }},
      {"limit", [](RunConfig& c, auto k, auto v) { c.limit = as_int(k, v); }},
      {"protocol",
       [](RunConfig& c, auto k, auto v) {
         try {
           c.protocol = parse_protocol(trim(v));
         } catch (const ContractError&) {
           throw UsageError(fmt::format("config key '{}': expected raw or filtered, got '{}'", k, trim(v)));
         }
       }},
      {"mode",
       [](RunConfig& c, auto k, auto v) {
         const std::string s = trim(v);
         if (s == "f64") {
           c.precision = Precision::f64;
         } else if (s == "f32") {
           c.precision = Precision::f32;
         } else {
           throw UsageError(fmt::format("config key '{}': expected f64 or f32, got '{}'", k, s));
         }
       }},
      {"data", [](RunConfig& c, auto, auto v) { c.data = trim(v); }},
      {"work", [](RunConfig& c, auto, auto v) { c.work = trim(v); }},
      {"out", [](RunConfig& c, auto, auto v) { c.out = trim(v); }},
      {"checkpoint", [](RunConfig& c, auto, auto v) { c.checkpoint = trim(v); }},
  };
  return table;
}

std::string env_name(std::string_view key) {
  std::string s = "KRLM_";
  for (char ch : key) s += ch == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return s;
}

}  // namespace

std::string_view precision_name(Precision p) { return p == Precision::f64 ? "f64" : "f32"; }

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, _] : setters()) k.push_back(name);
    return k;
  }();
  return keys;
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& [name, setter] : setters()) {
    if (name == key) {
      try {
        setter(cfg, key, value);
        cfg.explicit_keys.insert(name);
      } catch (const ContractError& e) {
        throw UsageError(fmt::format("config key '{}': {}", key, e.what()));
      }
      return;
    }
  }
  throw UsageError(fmt::format("unknown config key '{}'", key));
}

void apply_config_text(RunConfig& cfg, std::string_view text, std::vector<std::string>* warnings) {
  std::istringstream in{std::string(text)};
  std::string raw;
  std::map<std::string, int> seen;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    std::string key, value;
    if (const auto eq = line.find('='); eq != std::string::npos) {
      key = trim(std::string_view(line).substr(0, eq));
      value = trim(std::string_view(line).substr(eq + 1));
    } else {
      const auto sp = line.find_first_of(" \t");
      if (sp == std::string::npos) throw UsageError(fmt::format("config line {}: key '{}' has no value", line_no, line));
      key = line.substr(0, sp);
      value = trim(std::string_view(line).substr(sp + 1));
    }
    if (auto it = seen.find(key); it != seen.end() && warnings != nullptr) {
      warnings->push_back(fmt::format("config key '{}' repeated on line {} (first on line {}); the last value wins", key,
                                      line_no, it->second));
    }
    seen.emplace(key, line_no);
    set_config_value(cfg, key, value);
  }
}

void apply_environment(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& env) {
  std::map<std::string, std::string> by_name(env.begin(), env.end());
  for (const std::string& key : config_keys()) {
    if (auto it = by_name.find(env_name(key)); it != by_name.end()) set_config_value(cfg, key, it->second);
  }
}

std::vector<std::pair<std::string, std::string>> krlm_environment() {
  std::vector<std::pair<std::string, std::string>> out;
  for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
    std::string_view kv(*e);
    if (kv.rfind("KRLM_", 0) != 0) continue;
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos) continue;
    out.emplace_back(std::string(kv.substr(0, eq)), std::string(kv.substr(eq + 1)));
  }
  return out;
}

RunConfig parse_config(const std::filesystem::path& file, const std::vector<std::pair<std::string, std::string>>& env,
                       const std::vector<std::pair<std::string, std::string>>& flags, std::vector<std::string>* warnings) {
  RunConfig cfg;
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw UsageError(fmt::format("cannot read config file {}", file.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(cfg, ss.str(), warnings);
  }
  apply_environment(cfg, env);
  for (const auto& [k, v] : flags) set_config_value(cfg, k, v);
  cfg.finalize();
  cfg.validate();
  return cfg;
}

void RunConfig::finalize() {
  model.seed = seed;
  train.seed = seed;
  train.jobs = jobs;
  train.precision = precision;
}

void RunConfig::validate() const {
  try {
    model.validate();
    train.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  if (jobs < 1) throw UsageError("config key 'jobs': must be >= 1");
  if (limit < 0) throw UsageError("config key 'limit': must be >= 0");
}

nlohmann::json RunConfig::to_json() const {
  return {{"model", model.to_json()},
          {"train", train.to_json()},
          {"protocol", protocol_name(protocol)},
          {"precision", precision_name(precision)},
          {"jobs", jobs},
          {"limit", limit},
          {"seed", seed},
          {"data", data.string()},
          {"work", work.string()},
          {"out", out.string()},
          {"checkpoint", checkpoint.string()}};
}

}  // namespace krlm
