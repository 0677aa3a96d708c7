// SPDX-License-Identifier: Apache-2.0
//
// Named parameter storage, the AdamW optimizer with warmup and gradient
// accumulation, and the binary checkpoint container.

#pragma once

#include "krlm/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace krlm {

class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter& add(std::string name, Matrix init, bool trainable);
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  bool contains(std::string_view name) const { return params_.find(name) != params_.end(); }

  // Name-ordered views.
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::vector<Parameter*> trainable();

  void zero_grad();
  // Number of scalar entries in trainable (or frozen) parameters.
  std::size_t scalar_count(bool trainable) const;
  // FNV-1a over names, shapes and value bytes of the selected partition.
  std::uint64_t checksum(bool trainable) const;

 private:
  std::map<std::string, std::unique_ptr<Parameter>, std::less<>> params_;
};

using GradientMap = std::map<std::string, Matrix, std::less<>>;

// Snapshot of the gradients accumulated into every trainable parameter.
GradientMap collect_gradients(ParameterStore& store);

struct OptimizerConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  double warmup_fraction = 0.01;
  int accumulation = 4;
  // Number of parameter updates the schedule spans (micro-steps / accumulation).
  std::int64_t total_updates = 1;
};

/// AdamW with linear warmup and gradient accumulation.
///
/// Each call to step() is one micro-step. Gradients are summed across
/// `accumulation` micro-steps and their mean drives one parameter update.
class AdamW {
 public:
  AdamW(OptimizerConfig cfg, ParameterStore& store);

  // Returns true when this micro-step applied a parameter update.
  bool step(const GradientMap& grads);
  double learning_rate(std::int64_t update) const;

  std::int64_t micro_steps() const { return micro_steps_; }
  std::int64_t updates() const { return updates_; }
  const OptimizerConfig& config() const { return cfg_; }

  struct Moments {
    Matrix first;
    Matrix second;
  };
  const std::map<std::string, Moments, std::less<>>& moments() const { return moments_; }
  void restore(std::int64_t micro_steps, std::int64_t updates,
               std::map<std::string, Moments, std::less<>> moments);

 private:
  OptimizerConfig cfg_;
  ParameterStore* store_;
  std::int64_t micro_steps_ = 0;
  std::int64_t updates_ = 0;
  std::map<std::string, Moments, std::less<>> moments_;
  GradientMap pending_;
};

// Checkpoint container ------------------------------------------------------

struct CheckpointOptimizerState {
  std::int64_t micro_steps = 0;
  std::int64_t updates = 0;
  std::map<std::string, AdamW::Moments, std::less<>> moments;
};

struct Checkpoint {
  nlohmann::json manifest = nlohmann::json::object();
  struct Entry {
    Matrix value;
    bool frozen = false;
  };
  std::map<std::string, Entry, std::less<>> tensors;
  std::optional<CheckpointOptimizerState> optimizer;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

Checkpoint snapshot(const ParameterStore& store, const AdamW* optimizer, nlohmann::json manifest);
// Copies tensor values into matching parameters; every store parameter must be present
// with the same shape.
void restore(ParameterStore& store, const Checkpoint& ckpt);

// FNV-1a of a file's bytes, hex-encoded.
std::string file_hash(const std::filesystem::path& path);
std::string hash_hex(std::string_view bytes);

// Torch-style uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
Matrix uniform_init(Index rows, Index cols, Index fan_in, std::mt19937_64& rng);
Matrix gaussian_init(Index rows, Index cols, double stddev, std::mt19937_64& rng);

}  // namespace krlm
