// SPDX-License-Identifier: Apache-2.0
//
// KRL instruction assembly: attribute-aware pooling of token embeddings into
// word-level entity/relation vectors, the instruction template, and the
// substitution of the four special embeddings into the backbone stream.

#pragma once

#include "krlm/backbone.hpp"
#include "krlm/encoder.hpp"
#include "krlm/kg.hpp"

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace krlm {

struct PaaWeights {
  Parameter* w_down = nullptr;    // F x d
  Parameter* w_fusion = nullptr;  // 4d x d

  static PaaWeights create(const std::string& prefix, Index f, Index d, ParameterStore& store, std::mt19937_64& rng);
};

// Pools table rows for `ids`: project by W_down, concatenate the column-wise
// [mean | max | min | std], then multiply by W_fusion. Returns 1 x d.
Var paa(Tape& tape, const Matrix& table, std::span<const int> ids, const PaaWeights& w);
Var paa(Tape& tape, std::string_view word_format, const Tokenizer& tokenizer, const Matrix& table,
        const PaaWeights& w);

/// Parsed template resource. See resources/krl_template_v1.txt.
struct InstructionTemplate {
  int version = 0;
  std::string preamble;
  std::string vocabulary_header;
  std::string entity_line;
  std::string entity_line_bare;
  std::string relation_line;
  std::string relation_line_bare;
  std::string query;

  static InstructionTemplate parse(std::string_view text);
  // The template compiled into the library.
  static const InstructionTemplate& builtin();
};

struct InstructionConfig {
  int vocab_items = 8;
  int desc_tokens = 32;

  void validate() const;
};

// Tokenized names and (truncated) descriptions of every entity and relation
// of one graph. Built once per graph and shared by all queries over it.
struct GraphText {
  std::vector<std::vector<int>> entity_name, entity_desc;
  std::vector<std::vector<int>> relation_name, relation_desc;
  std::vector<int> separator;  // tokens of ": "

  static GraphText build(const KnowledgeGraph& kg, const Tokenizer& tokenizer, int desc_tokens);
  // Tokens of the surface form "name: description" (or "name" alone).
  std::vector<int> entity_word(int e) const;
  std::vector<int> relation_word(int r) const;
};

struct InstructionWeights {
  PaaWeights paa;
  Parameter* f_word = nullptr;    // d x F
  Parameter* f_struct = nullptr;  // d x F

  static InstructionWeights create(Index f, Index d, ParameterStore& store, std::mt19937_64& rng);
};

enum class SlotKind { word_head, struct_head, word_rel, struct_rel };

struct Slot {
  int position = 0;
  SlotKind kind = SlotKind::word_head;
};

struct KrlInstruction {
  std::vector<int> token_ids;  // -1 at slot positions
  std::vector<Slot> slots;
  std::vector<int> vocabulary_entities;
  Var T;     // m x F
  Var w_eh;  // 1 x d word-level head
  Var w_rq;  // 1 x d word-level relation
  Var mapped[4];  // 1 x F per SlotKind

  int length() const { return static_cast<int>(token_ids.size()); }
};

KrlInstruction build_instruction(Tape& tape, const QueryTriplet& query, const KnowledgeGraph& kg,
                                 const GraphText& text, const EncoderState& state,
                                 std::span<const double> struct_scores, const Backbone& backbone,
                                 const Tokenizer& tokenizer, const InstructionWeights& weights,
                                 const InstructionTemplate& tpl, const InstructionConfig& cfg);

}  // namespace krlm
