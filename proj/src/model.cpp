// SPDX-License-Identifier: Apache-2.0

#include "krlm/model.hpp"

namespace krlm {

void ModelConfig::validate() const {
  backbone.validate();
  encoder.validate();
  instruction.validate();
  if (memory_k < 0) throw ContractError("memory-k must be >= 0");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"backbone",
           {{"layers", backbone.layers},
            {"hidden", backbone.hidden},
            {"vocab_size", backbone.vocab_size},
            {"ffn_inner", backbone.inner()},
            {"seed", backbone.seed},
            {"max_seq_len", backbone.max_seq_len}}},
          {"encoder",
           {{"layers", encoder.layers},
            {"hidden", encoder.hidden},
            {"message", encoder.message},
            {"aggregation", encoder.aggregation}}},
          {"instruction", {{"vocab_items", instruction.vocab_items}, {"desc_tokens", instruction.desc_tokens}}},
          {"memory_k", memory_k},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  const auto& b = j.at("backbone");
  c.backbone.layers = b.at("layers");
  c.backbone.hidden = b.at("hidden");
  c.backbone.vocab_size = b.at("vocab_size");
  c.backbone.ffn_inner = b.at("ffn_inner");
  c.backbone.seed = b.at("seed");
  c.backbone.max_seq_len = b.at("max_seq_len");
  const auto& e = j.at("encoder");
  c.encoder.layers = e.at("layers");
  c.encoder.hidden = e.at("hidden");
  c.encoder.message = e.at("message");
  c.encoder.aggregation = e.at("aggregation");
  c.instruction.vocab_items = j.at("instruction").at("vocab_items");
  c.instruction.desc_tokens = j.at("instruction").at("desc_tokens");
  c.memory_k = j.at("memory_k");
  c.seed = j.at("seed");
  return c;
}

GraphContext GraphContext::build(const KnowledgeGraph& kg, const Tokenizer& tokenizer, const InstructionConfig& cfg) {
  if (!kg.augmented()) throw ContractError("graph context: graph must carry inverse relations");
  GraphContext ctx;
  ctx.kg = &kg;
  ctx.relational = build_relational_graph(kg);
  ctx.text = GraphText::build(kg, tokenizer, cfg.desc_tokens);
  return ctx;
}

GraphContext GraphContext::build(const KnowledgeGraph& kg, RelationalGraph relational, const Tokenizer& tokenizer,
                                 const InstructionConfig& cfg) {
  if (!kg.augmented()) throw ContractError("graph context: graph must carry inverse relations");
  if (relational.node_count != kg.relation_count()) throw ContractError("graph context: relational graph does not match");
  GraphContext ctx;
  ctx.kg = &kg;
  ctx.relational = std::move(relational);
  ctx.text = GraphText::build(kg, tokenizer, cfg.desc_tokens);
  return ctx;
}

namespace {
std::vector<double> probabilities(const Var& logits) {
  const Matrix& v = logits.value();
  std::vector<double> out(static_cast<std::size_t>(v.rows()));
  for (Index i = 0; i < v.rows(); ++i) out[static_cast<std::size_t>(i)] = logistic(v(i, 0));
  return out;
}
}  // namespace

std::vector<double> QueryResult::struct_scores() const { return probabilities(struct_logits); }
std::vector<double> QueryResult::krlm_scores() const { return probabilities(krlm_logits); }

KrlmModel::KrlmModel(ModelConfig cfg, Tokenizer tokenizer)
    : cfg_(std::move(cfg)), tokenizer_(std::move(tokenizer)), store_(std::make_unique<ParameterStore>()) {
  cfg_.validate();
  if (tokenizer_.size() > static_cast<std::size_t>(cfg_.backbone.vocab_size)) {
    throw ContractError("model: tokenizer is larger than the configured vocabulary size");
  }
  backbone_ = Backbone::init(cfg_.backbone, tokenizer_.size(), *store_);
  std::mt19937_64 rng(cfg_.seed);
  const Index f = cfg_.backbone.hidden;
  const Index d = cfg_.encoder.hidden;
  encoder_ = KnowledgeEncoder::create(cfg_.encoder, *store_, rng);
  instruction_ = InstructionWeights::create(f, d, *store_, rng);
  memory_ = MemoryWeights::create(cfg_.backbone.layers, f, d, *store_, rng);
  predictor_ = NextEntityPredictor::create(f, cfg_.encoder, *store_, rng);
}

QueryResult KrlmModel::forward(Tape& tape, const GraphContext& ctx, const QueryTriplet& query) const {
  return forward(tape, ctx, query, ctx.kg->edges());
}

QueryResult KrlmModel::forward(Tape& tape, const GraphContext& ctx, const QueryTriplet& query,
                               std::span<const TypedEdge> edges) const {
  const KnowledgeGraph& kg = *ctx.kg;
  QueryResult r;
  r.state = encoder_.encode(tape, kg, ctx.relational, query, edges);
  r.struct_logits = encoder_.score_logits(r.state);
  const std::vector<double> struct_scores = r.struct_scores();
  r.memory = select_memory(struct_scores, r.state.E, cfg_.memory_k);
  r.instruction = build_instruction(tape, query, kg, ctx.text, r.state, struct_scores, backbone_, tokenizer_,
                                    instruction_, InstructionTemplate::builtin(), cfg_.instruction);
  StackResult stack = run_stack(r.instruction.T, r.memory, backbone_, memory_);
  r.trace = std::move(stack.trace);
  r.h_last = ops::slice_rows(stack.hidden, stack.hidden.rows() - 1, 1);
  Var p_h = predictor_.project_head(tape, ctx.text.entity_word(query.head), backbone_);
  r.decoded = predictor_.decode_projection(kg.entity_count(), r.state.R, query, p_h, edges);
  r.krlm_logits = predictor_.score_logits(r.decoded, r.state.query_relation(), r.h_last);
  return r;
}

}  // namespace krlm
