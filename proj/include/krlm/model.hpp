// SPDX-License-Identifier: Apache-2.0
//
// The assembled model: frozen backbone, structural encoder, instruction
// weights, memory attention weights and the next-entity predictor, all
// registered in one parameter store.

#pragma once

#include "krlm/attention.hpp"
#include "krlm/backbone.hpp"
#include "krlm/encoder.hpp"
#include "krlm/instruction.hpp"
#include "krlm/predictor.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <span>
#include <vector>

namespace krlm {

struct ModelConfig {
  BackboneConfig backbone;
  EncoderConfig encoder;
  InstructionConfig instruction;
  int memory_k = 50;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Per-graph data shared by every query over that graph.
struct GraphContext {
  const KnowledgeGraph* kg = nullptr;
  RelationalGraph relational;
  GraphText text;

  static GraphContext build(const KnowledgeGraph& kg, const Tokenizer& tokenizer, const InstructionConfig& cfg);
  // With a relational graph computed earlier for the same kg.
  static GraphContext build(const KnowledgeGraph& kg, RelationalGraph relational, const Tokenizer& tokenizer,
                            const InstructionConfig& cfg);
};

struct QueryResult {
  EncoderState state;
  Var struct_logits;  // I x 1
  Var krlm_logits;    // I x 1
  Memory memory;
  KrlInstruction instruction;
  AttentionTrace trace;
  Var h_last;  // 1 x F
  Var decoded; // I x d

  std::vector<double> struct_scores() const;
  std::vector<double> krlm_scores() const;
};

class KrlmModel {
 public:
  KrlmModel(ModelConfig cfg, Tokenizer tokenizer);

  // `edges` replaces kg.edges() for message passing (e.g. with the query
  // triplet removed during training); it must outlive the tape.
  QueryResult forward(Tape& tape, const GraphContext& ctx, const QueryTriplet& query,
                      std::span<const TypedEdge> edges) const;
  QueryResult forward(Tape& tape, const GraphContext& ctx, const QueryTriplet& query) const;

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& config() { return cfg_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  ParameterStore& params() { return *store_; }
  const ParameterStore& params() const { return *store_; }
  const Backbone& backbone() const { return backbone_; }
  const KnowledgeEncoder& encoder() const { return encoder_; }
  const InstructionWeights& instruction_weights() const { return instruction_; }
  const MemoryWeights& memory_weights() const { return memory_; }
  const NextEntityPredictor& predictor() const { return predictor_; }

 private:
  ModelConfig cfg_;
  Tokenizer tokenizer_;
  std::unique_ptr<ParameterStore> store_;
  Backbone backbone_;
  KnowledgeEncoder encoder_;
  InstructionWeights instruction_;
  MemoryWeights memory_;
  NextEntityPredictor predictor_;
};

}  // namespace krlm
