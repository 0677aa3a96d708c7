// SPDX-License-Identifier: Apache-2.0

#include "krlm/encoder.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

namespace krlm {

void EncoderConfig::validate() const {
  if (layers < 0) throw ContractError("encoder: layers must be >= 0");
  if (hidden < 4) throw ContractError("encoder: hidden dim must be >= 4");
  if (message != "distmult") throw ContractError("encoder: only the distmult message function is supported");
  if (aggregation != "sum") throw ContractError("encoder: only sum aggregation is supported");
}

Mlp Mlp::create(const std::string& prefix, Index in, Index hidden, Index out, ParameterStore& store,
                std::mt19937_64& rng) {
  Mlp m;
  m.w1 = &store.add(prefix + ".w1", uniform_init(in, hidden, in, rng), true);
  m.b1 = &store.add(prefix + ".b1", uniform_init(1, hidden, in, rng), true);
  m.w2 = &store.add(prefix + ".w2", uniform_init(hidden, out, hidden, rng), true);
  m.b2 = &store.add(prefix + ".b2", uniform_init(1, out, hidden, rng), true);
  return m;
}

Var Mlp::forward(const Var& x) const {
  Tape& t = *x.tape();
  Var h = ops::relu(linear(x, t.param(*w1), t.param(*b1)));
  return linear(h, t.param(*w2), t.param(*b2));
}

GnnUpdate GnnUpdate::create(const std::string& prefix, Index d, ParameterStore& store, std::mt19937_64& rng) {
  GnnUpdate u;
  u.weight = &store.add(prefix + ".weight", uniform_init(2 * d, d, 2 * d, rng), true);
  u.bias = &store.add(prefix + ".bias", uniform_init(1, d, 2 * d, rng), true);
  u.gain = &store.add(prefix + ".norm_gain", Matrix::Ones(1, d), true);
  u.shift = &store.add(prefix + ".norm_shift", Matrix::Zero(1, d), true);
  return u;
}

Var GnnUpdate::forward(const Var& self, const Var& aggregate) const {
  Tape& t = *self.tape();
  const Var parts[] = {self, aggregate};
  Var z = ops::layer_norm(linear(ops::concat_cols(parts), t.param(*weight), t.param(*bias)));
  z = ops::mul(z, ops::broadcast_rows(t.param(*gain), z.rows()));
  return ops::relu(ops::add_row(z, t.param(*shift)));
}

// Relation GNN ------------------------------------------------------------------

RelationGnn RelationGnn::create(const std::string& prefix, const EncoderConfig& cfg, ParameterStore& store,
                                std::mt19937_64& rng) {
  cfg.validate();
  RelationGnn g;
  g.hidden_ = cfg.hidden;
  const Index d = cfg.hidden;
  g.patterns_ = &store.add(prefix + ".patterns", gaussian_init(kPatternCount, d, 1.0, rng), true);
  for (int s = 0; s < cfg.layers; ++s) {
    g.update_.push_back(GnnUpdate::create(fmt::format("{}.layer{}.update", prefix, s), d, store, rng));
  }
  return g;
}

Var RelationGnn::forward(Tape& tape, const RelationalGraph& rg, int query_rel) const {
  if (query_rel < 0 || query_rel >= rg.node_count) throw ContractError("relation GNN: query relation out of range");
  Matrix init = Matrix::Zero(rg.node_count, hidden_);
  init.row(query_rel).setOnes();
  Var h = tape.constant(std::move(init));
  Var patterns = tape.param(*patterns_);
  for (const GnnUpdate& u : update_) h = u.forward(h, ops::distmult_propagate(h, patterns, rg.edges, rg.node_count));
  return h;
}

// Entity GNN ----------------------------------------------------------------------

EntityGnn EntityGnn::create(const std::string& prefix, const EncoderConfig& cfg, ParameterStore& store,
                            std::mt19937_64& rng) {
  cfg.validate();
  EntityGnn g;
  const Index d = cfg.hidden;
  for (int s = 0; s < cfg.layers; ++s) {
    const std::string p = fmt::format("{}.layer{}", prefix, s);
    g.relation_mlp_.push_back(Mlp::create(p + ".rel_mlp", d, d, d, store, rng));
    g.update_.push_back(GnnUpdate::create(p + ".update", d, store, rng));
  }
  return g;
}

Var EntityGnn::forward(const Var& init, const Var& relations, std::span<const TypedEdge> edges) const {
  Var h = init;
  for (std::size_t s = 0; s < update_.size(); ++s) {
    Var rel = relation_mlp_[s].forward(relations);
    h = update_[s].forward(h, ops::distmult_propagate(h, rel, edges, init.rows()));
  }
  return h;
}

// Memory --------------------------------------------------------------------------

Var EncoderState::query_relation() const {
  const int idx[] = {query.rel};
  return ops::gather_rows(R, idx);
}

Var EncoderState::head_entity() const {
  const int idx[] = {query.head};
  return ops::gather_rows(E, idx);
}

bool Memory::contains(int entity) const { return std::find(ids.begin(), ids.end(), entity) != ids.end(); }

std::vector<int> top_k(std::span<const double> scores, int k) {
  const int n = static_cast<int>(scores.size());
  k = std::clamp(k, 0, n);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  auto better = [&](int a, int b) {
    const double sa = scores[static_cast<std::size_t>(a)], sb = scores[static_cast<std::size_t>(b)];
    return sa != sb ? sa > sb : a < b;
  };
  std::partial_sort(order.begin(), order.begin() + k, order.end(), better);
  order.resize(static_cast<std::size_t>(k));
  return order;
}

Memory select_memory(std::span<const double> scores, const Var& E, int k) {
  if (k < 0) throw ContractError("select_memory: K must be >= 0");
  if (static_cast<Index>(scores.size()) != E.rows()) throw ContractError("select_memory: score/embedding count mismatch");
  Memory m;
  m.ids = top_k(scores, k);
  for (int id : m.ids) m.scores.push_back(scores[static_cast<std::size_t>(id)]);
  if (!m.ids.empty()) m.embeddings = ops::gather_rows(E, m.ids);
  return m;
}

// Encoder ----------------------------------------------------------------------------

KnowledgeEncoder KnowledgeEncoder::create(const EncoderConfig& cfg, ParameterStore& store, std::mt19937_64& rng) {
  cfg.validate();
  KnowledgeEncoder enc;
  enc.cfg_ = cfg;
  enc.relation_gnn_ = RelationGnn::create("encoder.gnn_r", cfg, store, rng);
  enc.entity_gnn_ = EntityGnn::create("encoder.gnn_e", cfg, store, rng);
  enc.scorer_ = Mlp::create("encoder.score", 2 * cfg.hidden, cfg.hidden, 1, store, rng);
  return enc;
}

Var KnowledgeEncoder::encode_relations(Tape& tape, const RelationalGraph& rg, const QueryTriplet& query) const {
  return relation_gnn_.forward(tape, rg, query.rel);
}

Var KnowledgeEncoder::encode_entities(const KnowledgeGraph& kg, const Var& R, const QueryTriplet& query,
                                      std::span<const TypedEdge> edges) const {
  if (query.head < 0 || query.head >= kg.entity_count()) throw ContractError("encoder: head entity out of range");
  const int idx[] = {query.rel};
  Var rq = ops::gather_rows(R, idx);
  Var init = ops::place_row(rq, kg.entity_count(), query.head);
  return entity_gnn_.forward(init, R, edges);
}

EncoderState KnowledgeEncoder::encode(Tape& tape, const KnowledgeGraph& kg, const RelationalGraph& rg,
                                      const QueryTriplet& query, std::span<const TypedEdge> edges) const {
  EncoderState st;
  st.query = query;
  st.R = encode_relations(tape, rg, query);
  st.E = encode_entities(kg, st.R, query, edges);
  return st;
}

Var KnowledgeEncoder::score_logits(const EncoderState& state) const {
  Var rq = ops::broadcast_rows(state.query_relation(), state.E.rows());
  const Var parts[] = {state.E, rq};
  return scorer_.forward(ops::concat_cols(parts));
}

}  // namespace krlm
