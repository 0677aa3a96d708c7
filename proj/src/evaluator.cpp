// SPDX-License-Identifier: Apache-2.0

#include "krlm/evaluator.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <thread>

#include <fmt/format.h>

namespace krlm {

Protocol parse_protocol(std::string_view s) {
  if (s == "raw") return Protocol::raw;
  if (s == "filtered") return Protocol::filtered;
  throw ContractError(fmt::format("unknown protocol '{}' (expected raw or filtered)", s));
}

std::string_view protocol_name(Protocol p) { return p == Protocol::raw ? "raw" : "filtered"; }

nlohmann::json RankingMetrics::to_json() const { return {{"mrr", mrr}, {"hit10", hit10}, {"count", count}}; }

RankingMetrics metrics_from_ranks(std::span<const int> ranks) {
  RankingMetrics m;
  m.count = static_cast<int>(ranks.size());
  if (ranks.empty()) return m;
  double rr = 0.0;
  int hits = 0;
  for (int r : ranks) {
    if (r < 1) throw ContractError("metrics: ranks start at 1");
    rr += 1.0 / static_cast<double>(r);
    hits += r <= 10 ? 1 : 0;
  }
  m.mrr = rr / static_cast<double>(ranks.size());
  m.hit10 = static_cast<double>(hits) / static_cast<double>(ranks.size());
  return m;
}

std::vector<DirectedQuery> directed_queries(const KnowledgeGraph& kg, std::span<const Triplet> triplets) {
  if (!kg.augmented()) throw ContractError("directed_queries: graph must carry inverse relations");
  const int j = kg.base_relation_count();
  std::vector<DirectedQuery> out;
  out.reserve(triplets.size() * 2);
  for (std::size_t k = 0; k < triplets.size(); ++k) {
    const Triplet& t = triplets[k];
    if (t.head < 0 || t.head >= kg.entity_count() || t.tail < 0 || t.tail >= kg.entity_count()) {
      throw DataError(fmt::format("evaluation triplet {} references an entity outside the graph", k));
    }
    if (t.rel < 0 || t.rel >= j) throw DataError(fmt::format("evaluation triplet {} has an unknown relation", k));
    out.push_back(DirectedQuery{QueryTriplet{t.head, t.rel, t.tail}, static_cast<int>(k), false});
    out.push_back(DirectedQuery{QueryTriplet{t.tail, t.rel + j, t.head}, static_cast<int>(k), true});
  }
  return out;
}

int rank_of(std::span<const double> fused, int answer, const std::vector<char>* excluded) {
  const double a = fused[static_cast<std::size_t>(answer)];
  int rank = 1;
  for (std::size_t e = 0; e < fused.size(); ++e) {
    const int id = static_cast<int>(e);
    if (id == answer) continue;
    if (excluded != nullptr && (*excluded)[e]) continue;
    if (fused[e] > a || (fused[e] == a && id < answer)) ++rank;
  }
  return rank;
}

KnownAnswers::KnownAnswers(const KnowledgeGraph& kg, std::span<const std::vector<Triplet>> extra) {
  const int j = kg.base_relation_count();
  for (const Triplet& t : kg.triplets()) answers_[{t.head, t.rel}].push_back(t.tail);
  for (const auto& list : extra) {
    for (const Triplet& t : list) {
      answers_[{t.head, t.rel}].push_back(t.tail);
      answers_[{t.tail, t.rel + j}].push_back(t.head);
    }
  }
}

std::vector<char> KnownAnswers::mask(int head, int rel, int entity_count) const {
  std::vector<char> m(static_cast<std::size_t>(entity_count), 0);
  auto it = answers_.find({head, rel});
  if (it != answers_.end()) {
    for (int e : it->second) m[static_cast<std::size_t>(e)] = 1;
  }
  return m;
}

nlohmann::json EasyHardReport::to_json() const {
  return {{"memory_k", memory_k}, {"easy", easy.to_json()}, {"hard", hard.to_json()}};
}

EasyHardReport easy_hard_report(std::span<const QueryOutcome> outcomes, Protocol protocol, int memory_k) {
  std::vector<int> easy, hard;
  for (const QueryOutcome& o : outcomes) {
    const int r = protocol == Protocol::raw ? o.rank_raw : o.rank_filtered;
    (o.in_memory ? easy : hard).push_back(r);
  }
  EasyHardReport rep;
  rep.easy = metrics_from_ranks(easy);
  rep.hard = metrics_from_ranks(hard);
  rep.memory_k = memory_k;
  return rep;
}

nlohmann::json EvalReport::to_json(const std::string& dataset) const {
  return {{"dataset", dataset},
          {"protocol", protocol_name(protocol)},
          {"mrr", pooled.mrr},
          {"hit10", pooled.hit10},
          {"count", pooled.count},
          {"per_direction", {{"tail", tail.to_json()}, {"head", head.to_json()}}},
          {"easy_hard", easy_hard.to_json()}};
}

namespace {

struct ScoredQuery {
  std::vector<ScorePair> pairs;
  std::vector<int> memory;
};

ScoredQuery score_query(const KrlmModel& model, const GraphContext& ctx, const QueryTriplet& q, Precision precision) {
  Tape tape(precision);
  tape.set_grad_enabled(false);
  QueryResult r = model.forward(tape, ctx, q);
  return ScoredQuery{fuse_scores(r.struct_scores(), r.krlm_scores()), r.memory.ids};
}

}  // namespace

EvalReport rank_queries(const KrlmModel& model, const GraphContext& ctx, std::span<const Triplet> triplets,
                        const KnownAnswers& known, const EvalOptions& opts) {
  const KnowledgeGraph& kg = *ctx.kg;
  if (opts.limit > 0 && static_cast<std::size_t>(opts.limit) < triplets.size()) {
    triplets = triplets.first(static_cast<std::size_t>(opts.limit));
  }
  const std::vector<DirectedQuery> queries = directed_queries(kg, triplets);
  std::vector<ScoredQuery> scored(queries.size());
  const int jobs = std::max(1, opts.jobs);
  if (jobs == 1) {
    for (std::size_t i = 0; i < queries.size(); ++i) scored[i] = score_query(model, ctx, queries[i].query, opts.precision);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex failure_mu;
    for (int w = 0; w < jobs; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < queries.size(); i = next++) {
          try {
            scored[i] = score_query(model, ctx, queries[i].query, opts.precision);
          } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  EvalReport rep;
  rep.protocol = opts.protocol;
  std::vector<int> pooled, tail, head;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const DirectedQuery& dq = queries[i];
    const int answer = *dq.query.answer;
    std::vector<double> fused(scored[i].pairs.size());
    for (std::size_t e = 0; e < fused.size(); ++e) fused[e] = scored[i].pairs[e].fused;
    const std::vector<char> mask = known.mask(dq.query.head, dq.query.rel, kg.entity_count());
    QueryOutcome o;
    o.query = dq;
    o.rank_raw = rank_of(fused, answer);
    o.rank_filtered = rank_of(fused, answer, &mask);
    o.in_memory = std::find(scored[i].memory.begin(), scored[i].memory.end(), answer) != scored[i].memory.end();
    const int r = opts.protocol == Protocol::raw ? o.rank_raw : o.rank_filtered;
    pooled.push_back(r);
    (dq.inverse ? head : tail).push_back(r);
    rep.outcomes.push_back(o);

    if (opts.score_dump != nullptr) {
      std::vector<double> st(fused.size()), kr(fused.size());
      for (std::size_t e = 0; e < fused.size(); ++e) {
        st[e] = scored[i].pairs[e].structural;
        kr[e] = scored[i].pairs[e].krlm;
      }
      nlohmann::json j{{"index", i},         {"triplet", dq.triplet}, {"inverse", dq.inverse},
                       {"head", dq.query.head}, {"relation", dq.query.rel}, {"answer", answer},
                       {"fused", fused},     {"struct", st},          {"krlm", kr},
                       {"memory", scored[i].memory}};
      *opts.score_dump << j.dump() << '\n';
    }
    if (opts.prediction_dump != nullptr) {
      *opts.prediction_dump << prediction_record(dq.query, scored[i].pairs).dump() << '\n';
    }
  }
  rep.pooled = metrics_from_ranks(pooled);
  rep.tail = metrics_from_ranks(tail);
  rep.head = metrics_from_ranks(head);
  rep.easy_hard = easy_hard_report(rep.outcomes, opts.protocol, model.config().memory_k);
  return rep;
}

AttentionTrace export_attention(const KrlmModel& model, const GraphContext& ctx, const QueryTriplet& query,
                                std::ostream& os, Precision precision) {
  Tape tape(precision);
  tape.set_grad_enabled(false);
  QueryResult r = model.forward(tape, ctx, query);
  write_trace_jsonl(os, r.trace);
  return r.trace;
}

}  // namespace krlm
