// SPDX-License-Identifier: Apache-2.0
//
// Query-conditioned structural encoders. The relation GNN runs over the
// relational graph from an all-ones indicator at the query relation; the
// entity GNN runs over the KG from the query relation's embedding placed at
// the head entity. Both use DistMult messages, sum aggregation and a
// ReLU(LayerNorm(linear([self || aggregate]))) update.

#pragma once

#include "krlm/kg.hpp"
#include "krlm/params.hpp"

#include <span>
#include <string>
#include <vector>

namespace krlm {

struct EncoderConfig {
  int layers = 6;
  int hidden = 64;
  std::string message = "distmult";
  std::string aggregation = "sum";

  void validate() const;
};

// Two-layer perceptron Linear(in, hidden) -> ReLU -> Linear(hidden, out).
struct Mlp {
  Parameter* w1 = nullptr;
  Parameter* b1 = nullptr;
  Parameter* w2 = nullptr;
  Parameter* b2 = nullptr;

  static Mlp create(const std::string& prefix, Index in, Index hidden, Index out, ParameterStore& store,
                    std::mt19937_64& rng);
  Var forward(const Var& x) const;
};

// One GNN update: ReLU(LayerNorm([self | aggregate] W + b) * gain + shift).
struct GnnUpdate {
  Parameter* weight = nullptr;  // 2d x d
  Parameter* bias = nullptr;
  Parameter* gain = nullptr;
  Parameter* shift = nullptr;

  static GnnUpdate create(const std::string& prefix, Index d, ParameterStore& store, std::mt19937_64& rng);
  Var forward(const Var& self, const Var& aggregate) const;
};

class RelationGnn {
 public:
  static RelationGnn create(const std::string& prefix, const EncoderConfig& cfg, ParameterStore& store,
                            std::mt19937_64& rng);
  // (2J) x d relation embeddings for a query relation.
  Var forward(Tape& tape, const RelationalGraph& rg, int query_rel) const;
  int layers() const { return static_cast<int>(update_.size()); }
  const Parameter& patterns() const { return *patterns_; }

 private:
  int hidden_ = 0;
  Parameter* patterns_ = nullptr;  // 4 x d, one row per relative pattern
  std::vector<GnnUpdate> update_;
};

/// Entity-level GNN shared in form by the structural encoder and the
/// projection decoder; each instance owns its parameters.
class EntityGnn {
 public:
  static EntityGnn create(const std::string& prefix, const EncoderConfig& cfg, ParameterStore& store,
                          std::mt19937_64& rng);
  // init: I x d boundary condition. relations: (2J) x d. Messages follow `edges`
  // (src -> dst, typed by relation id). The span must outlive the tape.
  Var forward(const Var& init, const Var& relations, std::span<const TypedEdge> edges) const;
  int layers() const { return static_cast<int>(update_.size()); }

 private:
  std::vector<Mlp> relation_mlp_;
  std::vector<GnnUpdate> update_;
};

struct EncoderState {
  Var R;  // (2J) x d
  Var E;  // I x d
  QueryTriplet query;

  Var query_relation() const;  // 1 x d
  Var head_entity() const;     // 1 x d
};

struct Memory {
  std::vector<int> ids;        // descending score, ties by ascending id
  std::vector<double> scores;  // structural scores of the selected entities
  Var embeddings;              // K x d rows of E; invalid when K == 0

  int size() const { return static_cast<int>(ids.size()); }
  bool contains(int entity) const;
};

// Indices of the k largest scores, ties broken by ascending index.
std::vector<int> top_k(std::span<const double> scores, int k);
Memory select_memory(std::span<const double> scores, const Var& E, int k);

class KnowledgeEncoder {
 public:
  static KnowledgeEncoder create(const EncoderConfig& cfg, ParameterStore& store, std::mt19937_64& rng);

  Var encode_relations(Tape& tape, const RelationalGraph& rg, const QueryTriplet& query) const;
  Var encode_entities(const KnowledgeGraph& kg, const Var& R, const QueryTriplet& query,
                      std::span<const TypedEdge> edges) const;
  EncoderState encode(Tape& tape, const KnowledgeGraph& kg, const RelationalGraph& rg, const QueryTriplet& query,
                      std::span<const TypedEdge> edges) const;
  // Pre-logistic structural scores, I x 1.
  Var score_logits(const EncoderState& state) const;

  const EncoderConfig& config() const { return cfg_; }
  const Mlp& scorer() const { return scorer_; }

 private:
  EncoderConfig cfg_;
  RelationGnn relation_gnn_;
  EntityGnn entity_gnn_;
  Mlp scorer_;
};

}  // namespace krlm
