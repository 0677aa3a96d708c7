// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference checks of the reverse-mode gradients, and the
// small randomized instances they run on.

#pragma once

#include "krlm/kg.hpp"
#include "krlm/params.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace krlm {

struct GradcheckStats {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst;  // parameter[row,col] with the largest relative error
  int entries = 0;
};

// Relative error |a - n| / max(|a|, |n|, floor) between the analytic and the
// numeric derivative.
inline constexpr double kGradcheckFloor = 1e-6;

// `loss` builds a scalar on the given tape from the current parameter values.
// Every entry of every listed parameter is perturbed by +-eps.
GradcheckStats finite_difference_check(const std::function<Var(Tape&)>& loss, std::span<Parameter* const> params,
                                       double eps = 1e-5);

// Inverse-augmented random graph with descriptive names. Every entity takes
// part in at least one triplet.
KnowledgeGraph random_graph(int entities, int base_relations, int triplets, std::mt19937_64& rng);

struct GradcheckCase {
  std::string name;
  GradcheckStats stats;
  double seconds = 0.0;
};

// Structural encoders (relation and entity GNN) on a random small graph.
GradcheckCase gradcheck_encoders(std::uint64_t seed);
// One memory-augmented attention layer with a 3-entry memory.
GradcheckCase gradcheck_attention_layer(std::uint64_t seed);
// The full training objective of a miniature model on a 5-entity graph.
GradcheckCase gradcheck_full_loss(std::uint64_t seed);

std::vector<GradcheckCase> run_gradcheck_suite(std::uint64_t seed);
nlohmann::json to_json(const GradcheckCase& c);

}  // namespace krlm
