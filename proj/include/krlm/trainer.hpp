// SPDX-License-Identifier: Apache-2.0
//
// Negative sampling, the mutual-distillation objective, and the training loop.

#pragma once

#include "krlm/dataset.hpp"
#include "krlm/evaluator.hpp"
#include "krlm/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace krlm {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// n ids drawn uniformly without replacement from all entities except the
// answer. With fewer than n eligible entities the draw is with replacement and
// `with_replacement` (if given) is set.
std::vector<int> sample_negatives(const QueryTriplet& query, int entity_count, int n, std::mt19937_64& rng,
                                  bool* with_replacement = nullptr);

// Candidate logits: row 0 is the positive, rows 1..n the negatives.
struct CandidateLogits {
  std::vector<int> candidates;
  Var logits;  // (n + 1) x 1, pre-logistic
};

CandidateLogits gather_candidates(const Var& logits, std::vector<int> candidates);

enum class BceSign {
  standard,    // -log sc+ - mean log(1 - sc-)
  as_printed,  // -log sc+ + mean log(1 - sc-)
};

struct LossBreakdown {
  double bce_krlm = 0.0;
  double bce_struct = 0.0;
  double kl_struct_to_krlm = 0.0;  // KL(P_struct || P_krlm)
  double kl_krlm_to_struct = 0.0;  // KL(P_krlm || P_struct)
  double total = 0.0;
  double lambda = 0.5;

  nlohmann::json to_json() const;
};

struct LossResult {
  Var total;
  LossBreakdown parts;
};

LossResult compute_loss(const CandidateLogits& structural, const CandidateLogits& krlm, double lambda,
                        BceSign sign = BceSign::standard);

enum class TrainMode { pretrain, finetune, e2e };
TrainMode parse_train_mode(std::string_view s);
std::string_view train_mode_name(TrainMode m);

struct TrainConfig {
  TrainMode mode = TrainMode::e2e;
  int epochs = 10;
  int steps_per_epoch = 0;  // 0: one pass over every directed training triplet
  int batch = 4;
  int negatives = 256;
  double lambda = 0.5;
  BceSign sign = BceSign::standard;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;
  int valid_every = 0;  // steps between validations; 0: once per epoch
  int valid_limit = 0;  // validation triplets used; 0: all
  int jobs = 1;         // validation only
  Precision precision = Precision::f64;

  void validate() const;
  nlohmann::json to_json() const;
};

// Fine-tuning epochs per dataset (all training triplets per epoch).
int finetune_epochs(std::string_view dataset);

struct StepLog {
  int step = 0;
  LossBreakdown loss;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<StepLog> steps;
  std::vector<std::pair<int, double>> validation;  // (step, fused filtered MRR)
  int best_step = 0;
  double best_valid_mrr = -1.0;
  int total_steps = 0;
};

struct TrainOutputs {
  std::filesystem::path dir;  // empty: write nothing
  nlohmann::json manifest = nlohmann::json::object();
  std::function<void(const std::string&)> log;  // progress lines
};

// Training graph queries are its own triplets in both directions; the query
// edge and its inverse are removed from message passing for that query.
// `ctx` wraps the inverse-augmented training graph.
TrainResult train(KrlmModel& model, const GraphContext& ctx, std::span<const Triplet> valid,
                  const TrainConfig& cfg, const TrainOutputs& out = {});

}  // namespace krlm
