// SPDX-License-Identifier: Apache-2.0
//
// Ranking evaluation over both query directions, the easy/hard memory
// partition, and attention-trace export.

#pragma once

#include "krlm/model.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace krlm {

enum class Protocol { raw, filtered };
Protocol parse_protocol(std::string_view s);
std::string_view protocol_name(Protocol p);

struct RankingMetrics {
  double mrr = 0.0;
  double hit10 = 0.0;
  int count = 0;

  nlohmann::json to_json() const;
};

RankingMetrics metrics_from_ranks(std::span<const int> ranks);

// Test triplet k yields query 2k = (h, r, ?) -> t and 2k+1 = (t, r^-1, ?) -> h.
struct DirectedQuery {
  QueryTriplet query;
  int triplet = 0;
  bool inverse = false;
};
std::vector<DirectedQuery> directed_queries(const KnowledgeGraph& kg, std::span<const Triplet> triplets);

// 1 + entities scoring strictly higher + equal-scoring entities with a smaller
// id. Entities flagged in `excluded` (other than the answer) are skipped.
int rank_of(std::span<const double> fused, int answer, const std::vector<char>* excluded = nullptr);

// Known true answers per (head, relation) for the filtered protocol.
class KnownAnswers {
 public:
  // `kg` is inverse-augmented; extra triplets use base relations and are
  // added in both directions.
  KnownAnswers(const KnowledgeGraph& kg, std::span<const std::vector<Triplet>> extra);
  std::vector<char> mask(int head, int rel, int entity_count) const;

 private:
  std::map<std::pair<int, int>, std::vector<int>> answers_;
};

struct QueryOutcome {
  DirectedQuery query;
  int rank_raw = 0;
  int rank_filtered = 0;
  bool in_memory = false;
};

struct EasyHardReport {
  RankingMetrics easy;
  RankingMetrics hard;
  int memory_k = 0;

  nlohmann::json to_json() const;
};

struct EvalOptions {
  Protocol protocol = Protocol::filtered;
  int jobs = 1;
  Precision precision = Precision::f64;
  int limit = 0;                             // evaluate only the first `limit` triplets when > 0
  std::ostream* score_dump = nullptr;        // per query: all fused, struct and krlm scores
  std::ostream* prediction_dump = nullptr;   // per query: top 10
};

struct EvalReport {
  Protocol protocol = Protocol::filtered;
  RankingMetrics pooled;
  RankingMetrics tail;  // (h, r, ?) direction
  RankingMetrics head;  // (t, r^-1, ?) direction
  EasyHardReport easy_hard;
  std::vector<QueryOutcome> outcomes;

  nlohmann::json to_json(const std::string& dataset) const;
};

EvalReport rank_queries(const KrlmModel& model, const GraphContext& ctx, std::span<const Triplet> triplets,
                        const KnownAnswers& known, const EvalOptions& opts);

EasyHardReport easy_hard_report(std::span<const QueryOutcome> outcomes, Protocol protocol, int memory_k);

// Writes the per-layer attention trace for one query.
AttentionTrace export_attention(const KrlmModel& model, const GraphContext& ctx, const QueryTriplet& query,
                                std::ostream& os, Precision precision = Precision::f64);

}  // namespace krlm
