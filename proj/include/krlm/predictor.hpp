// SPDX-License-Identifier: Apache-2.0
//
// Graph-constrained next-entity prediction. The head entity's word format is
// pooled over the backbone's projection head, propagated through a decoder
// GNN to give one row per entity, and scored together with the query relation
// and the last hidden state of the instruction. Final scores average the
// structural and language-model probabilities.

#pragma once

#include "krlm/encoder.hpp"
#include "krlm/instruction.hpp"

#include <nlohmann/json_fwd.hpp>

#include <span>
#include <vector>

namespace krlm {

class NextEntityPredictor {
 public:
  static NextEntityPredictor create(Index f, const EncoderConfig& cfg, ParameterStore& store, std::mt19937_64& rng);

  // PAA over rows of the projection head; 1 x d.
  Var project_head(Tape& tape, std::span<const int> word_ids, const Backbone& backbone) const;
  // I x d: p_h at the head row, zeros elsewhere, then the decoder GNN.
  Var decode_projection(Index entity_count, const Var& R, const QueryTriplet& query, const Var& p_h,
                        std::span<const TypedEdge> edges) const;
  // I x 1 pre-logistic scores from [P~_i | r_q | g(h_last)].
  Var score_logits(const Var& P, const Var& r_q, const Var& h_last) const;

  const Mlp& scorer() const { return scorer_; }
  const PaaWeights& paa_weights() const { return paa_; }

 private:
  PaaWeights paa_;
  EntityGnn gnn_;
  Parameter* g_weight_ = nullptr;  // F x d
  Parameter* g_bias_ = nullptr;    // 1 x d
  Mlp scorer_;
};

struct ScorePair {
  double structural = 0.0;
  double krlm = 0.0;
  double fused = 0.0;
};

double logistic(double x);
std::vector<ScorePair> fuse_scores(std::span<const double> structural, std::span<const double> krlm);
// Entity ids by fused score descending, ties by ascending id.
std::vector<int> fuse_and_rank(std::span<const ScorePair> pairs);

// {query, top10:[{entity, fused, struct, krlm}]}
nlohmann::json prediction_record(const QueryTriplet& query, std::span<const ScorePair> pairs, int top = 10);

}  // namespace krlm
