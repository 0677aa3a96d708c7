// SPDX-License-Identifier: Apache-2.0

#include "krlm/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

namespace krlm {

NextEntityPredictor NextEntityPredictor::create(Index f, const EncoderConfig& cfg, ParameterStore& store,
                                                std::mt19937_64& rng) {
  cfg.validate();
  const Index d = cfg.hidden;
  NextEntityPredictor p;
  p.paa_ = PaaWeights::create("predictor.paa_head", f, d, store, rng);
  p.gnn_ = EntityGnn::create("predictor.gnn_p", cfg, store, rng);
  p.g_weight_ = &store.add("predictor.g.weight", uniform_init(f, d, f, rng), true);
  p.g_bias_ = &store.add("predictor.g.bias", uniform_init(1, d, f, rng), true);
  p.scorer_ = Mlp::create("predictor.score", 3 * d, d, 1, store, rng);
  return p;
}

Var NextEntityPredictor::project_head(Tape& tape, std::span<const int> word_ids, const Backbone& backbone) const {
  return paa(tape, backbone.head(), word_ids, paa_);
}

Var NextEntityPredictor::decode_projection(Index entity_count, const Var& R, const QueryTriplet& query,
                                           const Var& p_h, std::span<const TypedEdge> edges) const {
  if (query.head < 0 || query.head >= entity_count) throw ContractError("decode_projection: head out of range");
  return gnn_.forward(ops::place_row(p_h, entity_count, query.head), R, edges);
}

Var NextEntityPredictor::score_logits(const Var& P, const Var& r_q, const Var& h_last) const {
  Tape& t = *P.tape();
  if (h_last.rows() != 1) throw ContractError("score_logits: h_last must be a single row");
  Var g = linear(h_last, t.param(*g_weight_), t.param(*g_bias_));
  const Index n = P.rows();
  const Var parts[] = {P, ops::broadcast_rows(r_q, n), ops::broadcast_rows(g, n)};
  return scorer_.forward(ops::concat_cols(parts));
}

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<ScorePair> fuse_scores(std::span<const double> structural, std::span<const double> krlm) {
  if (structural.size() != krlm.size()) throw ContractError("fuse_scores: score vectors differ in length");
  std::vector<ScorePair> out(structural.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = ScorePair{structural[i], krlm[i], (structural[i] + krlm[i]) / 2.0};
  }
  return out;
}

std::vector<int> fuse_and_rank(std::span<const ScorePair> pairs) {
  std::vector<int> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return pairs[static_cast<std::size_t>(a)].fused > pairs[static_cast<std::size_t>(b)].fused;
  });
  return order;
}

nlohmann::json prediction_record(const QueryTriplet& query, std::span<const ScorePair> pairs, int top) {
  nlohmann::json q{{"head", query.head}, {"relation", query.rel}};
  if (query.answer) q["answer"] = *query.answer;
  nlohmann::json list = nlohmann::json::array();
  const std::vector<int> order = fuse_and_rank(pairs);
  for (int i = 0; i < std::min<int>(top, static_cast<int>(order.size())); ++i) {
    const ScorePair& p = pairs[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    list.push_back({{"entity", order[static_cast<std::size_t>(i)]}, {"fused", p.fused}, {"struct", p.structural},
                    {"krlm", p.krlm}});
  }
  return {{"query", q}, {"top10", list}};
}

}  // namespace krlm
