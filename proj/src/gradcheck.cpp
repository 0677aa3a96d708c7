// SPDX-License-Identifier: Apache-2.0

#include "krlm/gradcheck.hpp"

#include "krlm/attention.hpp"
#include "krlm/model.hpp"
#include "krlm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include <fmt/format.h>

namespace krlm {

GradcheckStats finite_difference_check(const std::function<Var(Tape&)>& loss, std::span<Parameter* const> params,
                                       double eps) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  std::vector<Matrix> analytic;
  for (Parameter* p : params) analytic.push_back(p->grad);

  auto evaluate = [&] {
    Tape tape;
    tape.set_grad_enabled(false);
    return loss(tape).scalar();
  };

  GradcheckStats st;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    for (Index i = 0; i < p.value.rows(); ++i) {
      for (Index j = 0; j < p.value.cols(); ++j) {
        const double saved = p.value(i, j);
        p.value(i, j) = saved + eps;
        const double up = evaluate();
        p.value(i, j) = saved - eps;
        const double down = evaluate();
        p.value(i, j) = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double a = analytic[k](i, j);
        const double abs_err = std::abs(a - numeric);
        const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), kGradcheckFloor});
        st.max_abs_error = std::max(st.max_abs_error, abs_err);
        if (rel > st.max_rel_error || st.entries == 0) {
          st.max_rel_error = rel;
          st.worst = fmt::format("{}[{},{}]", p.name, i, j);
        }
        ++st.entries;
      }
    }
  }
  for (Parameter* p : params) p->zero_grad();
  return st;
}

KnowledgeGraph random_graph(int entities, int base_relations, int triplets, std::mt19937_64& rng) {
  if (entities < 2 || base_relations < 1) throw ContractError("random_graph: need >= 2 entities and >= 1 relation");
  if (triplets < (entities + 1) / 2) throw ContractError("random_graph: too few triplets to cover every entity");
  static const char* syllables[] = {"ka", "lo", "mi", "ren", "tu", "sa", "vi", "dor", "pe", "zan"};
  auto word = [&](int parts) {
    std::string w;
    std::uniform_int_distribution<int> pick(0, 9);
    for (int p = 0; p < parts; ++p) w += syllables[pick(rng)];
    return w;
  };
  std::vector<EntityRecord> ents;
  for (int e = 0; e < entities; ++e) ents.push_back(EntityRecord{e, word(2) + std::to_string(e), "a " + word(2) + " thing"});
  std::vector<RelationRecord> rels;
  for (int r = 0; r < base_relations; ++r) rels.push_back(RelationRecord{r, word(1) + " of", "relation " + word(1), false, r});

  std::uniform_int_distribution<int> pick_e(0, entities - 1);
  std::uniform_int_distribution<int> pick_r(0, base_relations - 1);
  std::set<Triplet> seen;
  std::vector<Triplet> out;
  auto try_add = [&](Triplet t) {
    if (t.head == t.tail || !seen.insert(t).second) return false;
    out.push_back(t);
    return true;
  };
  for (int e = 0; e < entities; e += 2) {
    const int other = e + 1 < entities ? e + 1 : 0;
    try_add(Triplet{e, pick_r(rng), other});
  }
  const long capacity = static_cast<long>(entities) * (entities - 1) * base_relations;
  const int target = static_cast<int>(std::min<long>(triplets, capacity));
  while (static_cast<int>(out.size()) < target) try_add(Triplet{pick_e(rng), pick_r(rng), pick_e(rng)});
  return augment_inverses(KnowledgeGraph(std::move(ents), std::move(rels), std::move(out), false));
}

namespace {

Matrix random_matrix(Index r, Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

GradcheckCase gradcheck_encoders(std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  const KnowledgeGraph kg = random_graph(7, 3, 12, rng);
  const RelationalGraph rg = build_relational_graph(kg);
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 5;
  ParameterStore store;
  const KnowledgeEncoder enc = KnowledgeEncoder::create(cfg, store, rng);
  const Triplet& t = kg.triplets()[0];
  const QueryTriplet q{t.head, t.rel, t.tail};
  const Matrix cr = random_matrix(kg.relation_count(), cfg.hidden, rng);
  const Matrix ce = random_matrix(kg.entity_count(), cfg.hidden, rng);
  const Matrix cs = random_matrix(kg.entity_count(), 1, rng);
  auto loss = [&](Tape& tape) {
    EncoderState s = enc.encode(tape, kg, rg, q, kg.edges());
    Var total = ops::sum(ops::mul(s.R, tape.constant(cr)));
    total = ops::add(total, ops::sum(ops::mul(s.E, tape.constant(ce))));
    return ops::add(total, ops::sum(ops::mul(enc.score_logits(s), tape.constant(cs))));
  };
  const std::vector<Parameter*> params = store.trainable();
  return GradcheckCase{"encoders", finite_difference_check(loss, params), seconds_since(t0)};
}

GradcheckCase gradcheck_attention_layer(std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  BackboneConfig bcfg;
  bcfg.layers = 1;
  bcfg.hidden = 8;
  bcfg.vocab_size = 64;
  bcfg.seed = seed;
  const Index d = 4, m = 6, k = 3;
  ParameterStore store;
  const Backbone backbone = Backbone::init(bcfg, 64, store);
  const MemoryWeights weights = MemoryWeights::create(1, bcfg.hidden, d, store, rng);
  Parameter& h = store.add("check.h", random_matrix(m, bcfg.hidden, rng), true);
  Parameter& mem = store.add("check.memory", random_matrix(k, d, rng), true);
  const Matrix c = random_matrix(m, bcfg.hidden, rng);
  auto loss = [&](Tape& tape) {
    Memory memory;
    memory.ids = {0, 1, 2};
    memory.scores = {0.9, 0.5, 0.1};
    memory.embeddings = tape.param(mem);
    Var out = attention_layer(tape.param(h), memory, 0, backbone, weights);
    return ops::sum(ops::mul(out, tape.constant(c)));
  };
  const std::vector<Parameter*> params = store.trainable();
  return GradcheckCase{"attention_layer", finite_difference_check(loss, params), seconds_since(t0)};
}

GradcheckCase gradcheck_full_loss(std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  const KnowledgeGraph kg = random_graph(5, 2, 8, rng);
  std::vector<std::string> corpus;
  for (const auto& e : kg.entities()) {
    corpus.push_back(e.name);
    corpus.push_back(e.description);
  }
  for (const auto& r : kg.relations()) corpus.push_back(r.name);
  ModelConfig cfg;
  cfg.backbone.layers = 1;
  cfg.backbone.hidden = 8;
  cfg.backbone.vocab_size = 320;
  cfg.encoder.layers = 2;
  cfg.encoder.hidden = 4;
  cfg.instruction.vocab_items = 3;
  cfg.instruction.desc_tokens = 4;
  cfg.memory_k = 3;
  cfg.seed = seed;
  KrlmModel model(cfg, Tokenizer::build(corpus, 320));
  const GraphContext ctx = GraphContext::build(kg, model.tokenizer(), cfg.instruction);
  const Triplet& t = kg.triplets()[0];
  const QueryTriplet q{t.head, t.rel, t.tail};
  std::vector<int> candidates{t.tail};
  for (int e = 0; e < kg.entity_count(); ++e) {
    if (e != t.tail) candidates.push_back(e);
  }
  auto loss = [&](Tape& tape) {
    QueryResult r = model.forward(tape, ctx, q);
    return compute_loss(gather_candidates(r.struct_logits, candidates), gather_candidates(r.krlm_logits, candidates),
                        0.5)
        .total;
  };
  const std::vector<Parameter*> params = model.params().trainable();
  return GradcheckCase{"full_loss", finite_difference_check(loss, params), seconds_since(t0)};
}

std::vector<GradcheckCase> run_gradcheck_suite(std::uint64_t seed) {
  return {gradcheck_encoders(seed), gradcheck_attention_layer(seed + 1), gradcheck_full_loss(seed + 2)};
}

nlohmann::json to_json(const GradcheckCase& c) {
  return {{"case", c.name},
          {"max_rel_error", c.stats.max_rel_error},
          {"max_abs_error", c.stats.max_abs_error},
          {"worst", c.stats.worst},
          {"entries", c.stats.entries},
          {"seconds", c.seconds}};
}

}  // namespace krlm
