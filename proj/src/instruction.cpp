// SPDX-License-Identifier: Apache-2.0

#include "krlm/instruction.hpp"

#include <algorithm>
#include <map>

#include <fmt/format.h>

extern const char* krlm_template_text;

namespace krlm {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool all_space(std::string_view s) { return trim(s).empty() && s.find('\n') == std::string_view::npos; }

// A rendered piece: literal tokens, or a slot (kind >= 0).
struct Piece {
  std::vector<int> tokens;
  int slot = -1;
};

void append(std::vector<int>& dst, std::span<const int> src) { dst.insert(dst.end(), src.begin(), src.end()); }

// Renders a line template with {name} and {description} into tokens.
std::vector<int> render_item(std::string_view pattern, std::span<const int> name, std::span<const int> desc,
                             const Tokenizer& tk) {
  std::vector<int> out;
  std::size_t i = 0;
  while (i < pattern.size()) {
    const auto open = pattern.find('{', i);
    if (open == std::string_view::npos) {
      append(out, tk.encode(pattern.substr(i)));
      break;
    }
    const auto close = pattern.find('}', open);
    if (close == std::string_view::npos) throw ContractError("instruction template: unterminated placeholder");
    append(out, tk.encode(pattern.substr(i, open - i)));
    const std::string_view key = pattern.substr(open + 1, close - open - 1);
    if (key == "name") {
      append(out, name);
    } else if (key == "description") {
      append(out, desc);
    } else {
      throw ContractError(fmt::format("instruction template: unknown placeholder {{{}}}", key));
    }
    i = close + 1;
  }
  return out;
}

std::vector<Piece> render_query(std::string_view pattern, const Tokenizer& tk) {
  static const std::map<std::string_view, SlotKind> kSlots = {{"W_EH", SlotKind::word_head},
                                                              {"K_EH", SlotKind::struct_head},
                                                              {"W_RQ", SlotKind::word_rel},
                                                              {"K_RQ", SlotKind::struct_rel}};
  std::vector<Piece> out;
  std::vector<std::string_view> literals;
  std::vector<int> slots;
  std::size_t i = 0;
  while (true) {
    const auto open = pattern.find('{', i);
    if (open == std::string_view::npos) {
      literals.push_back(pattern.substr(i));
      break;
    }
    const auto close = pattern.find('}', open);
    if (close == std::string_view::npos) throw ContractError("instruction template: unterminated slot");
    const auto it = kSlots.find(pattern.substr(open + 1, close - open - 1));
    if (it == kSlots.end()) throw ContractError("instruction template: unknown slot in query line");
    literals.push_back(pattern.substr(i, open - i));
    slots.push_back(static_cast<int>(it->second));
    i = close + 1;
  }
  for (std::size_t k = 0; k < literals.size(); ++k) {
    const bool between_slots = k > 0 && k < slots.size();
    if (!(between_slots && all_space(literals[k])) && !literals[k].empty()) {
      out.push_back(Piece{tk.encode(literals[k]), -1});
    }
    if (k < slots.size()) out.push_back(Piece{{}, slots[k]});
  }
  return out;
}

}  // namespace

PaaWeights PaaWeights::create(const std::string& prefix, Index f, Index d, ParameterStore& store,
                              std::mt19937_64& rng) {
  PaaWeights w;
  w.w_down = &store.add(prefix + ".w_down", uniform_init(f, d, f, rng), true);
  w.w_fusion = &store.add(prefix + ".w_fusion", uniform_init(4 * d, d, 4 * d, rng), true);
  return w;
}

Var paa(Tape& tape, const Matrix& table, std::span<const int> ids, const PaaWeights& w) {
  if (ids.empty()) throw ContractError("paa: empty tokenization");
  Var x = ops::matmul(ops::gather_rows_const(tape, table, ids), tape.param(*w.w_down));
  const Var stats[] = {ops::reduce_mean(x), ops::reduce_max(x), ops::reduce_min(x), ops::reduce_std(x)};
  return ops::matmul(ops::concat_cols(stats), tape.param(*w.w_fusion));
}

Var paa(Tape& tape, std::string_view word_format, const Tokenizer& tokenizer, const Matrix& table,
        const PaaWeights& w) {
  const std::vector<int> ids = tokenizer.encode(word_format);
  return paa(tape, table, ids, w);
}

InstructionTemplate InstructionTemplate::parse(std::string_view text) {
  InstructionTemplate t;
  std::map<std::string, std::string*> fields = {{"preamble", &t.preamble},
                                                {"vocabulary_header", &t.vocabulary_header},
                                                {"entity_line", &t.entity_line},
                                                {"entity_line_bare", &t.entity_line_bare},
                                                {"relation_line", &t.relation_line},
                                                {"relation_line_bare", &t.relation_line_bare},
                                                {"query", &t.query}};
  std::map<std::string, bool> seen;
  std::size_t pos = 0;
  int lineno = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view raw = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ContractError(fmt::format("instruction template line {}: expected key = value", lineno));
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key == "version") {
      t.version = std::stoi(value);
    } else if (auto it = fields.find(key); it != fields.end()) {
      *it->second = value;
    } else {
      throw ContractError(fmt::format("instruction template line {}: unknown key '{}'", lineno, key));
    }
    seen[key] = true;
  }
  if (t.version != 1) throw ContractError(fmt::format("instruction template: unsupported version {}", t.version));
  for (const auto& [k, v] : fields) {
    if (!seen[k]) throw ContractError(fmt::format("instruction template: missing key '{}'", k));
  }
  return t;
}

const InstructionTemplate& InstructionTemplate::builtin() {
  static const InstructionTemplate t = parse(krlm_template_text);
  return t;
}

void InstructionConfig::validate() const {
  if (vocab_items < 0) throw ContractError("instruction: vocab_items must be >= 0");
  if (desc_tokens < 0) throw ContractError("instruction: desc_tokens must be >= 0");
}

GraphText GraphText::build(const KnowledgeGraph& kg, const Tokenizer& tokenizer, int desc_tokens) {
  GraphText g;
  auto truncated = [&](const std::string& s) {
    std::vector<int> ids = tokenizer.encode(s);
    if (static_cast<int>(ids.size()) > desc_tokens) ids.resize(static_cast<std::size_t>(desc_tokens));
    return ids;
  };
  for (const EntityRecord& e : kg.entities()) {
    g.entity_name.push_back(tokenizer.encode(e.name));
    g.entity_desc.push_back(truncated(e.description));
  }
  for (const RelationRecord& r : kg.relations()) {
    g.relation_name.push_back(tokenizer.encode(r.name));
    g.relation_desc.push_back(truncated(r.description));
  }
  g.separator = tokenizer.encode(": ");
  return g;
}

namespace {
std::vector<int> word_of(const std::vector<int>& name, const std::vector<int>& desc, const std::vector<int>& sep) {
  std::vector<int> out = name;
  if (!desc.empty()) {
    append(out, sep);
    append(out, desc);
  }
  return out;
}
}  // namespace

std::vector<int> GraphText::entity_word(int e) const {
  const auto i = static_cast<std::size_t>(e);
  return word_of(entity_name.at(i), entity_desc.at(i), separator);
}

std::vector<int> GraphText::relation_word(int r) const {
  const auto i = static_cast<std::size_t>(r);
  return word_of(relation_name.at(i), relation_desc.at(i), separator);
}

InstructionWeights InstructionWeights::create(Index f, Index d, ParameterStore& store, std::mt19937_64& rng) {
  InstructionWeights w;
  w.paa = PaaWeights::create("instruction.paa_emb", f, d, store, rng);
  w.f_word = &store.add("instruction.f_word", uniform_init(d, f, d, rng), true);
  w.f_struct = &store.add("instruction.f_struct", uniform_init(d, f, d, rng), true);
  return w;
}

KrlInstruction build_instruction(Tape& tape, const QueryTriplet& query, const KnowledgeGraph& kg,
                                 const GraphText& text, const EncoderState& state,
                                 std::span<const double> struct_scores, const Backbone& backbone,
                                 const Tokenizer& tokenizer, const InstructionWeights& weights,
                                 const InstructionTemplate& tpl, const InstructionConfig& cfg) {
  cfg.validate();
  if (query.head < 0 || query.head >= kg.entity_count()) throw ContractError("instruction: head entity out of range");
  if (query.rel < 0 || query.rel >= kg.relation_count()) throw ContractError("instruction: relation out of range");
  if (static_cast<int>(struct_scores.size()) != kg.entity_count()) {
    throw ContractError("instruction: structural scores do not cover the entity set");
  }

  KrlInstruction ins;
  const std::vector<int> head_word = text.entity_word(query.head);
  const std::vector<int> rel_word = text.relation_word(query.rel);
  ins.w_eh = paa(tape, backbone.embedding(), head_word, weights.paa);
  ins.w_rq = paa(tape, backbone.embedding(), rel_word, weights.paa);
  Var f_word = tape.param(*weights.f_word);
  Var f_struct = tape.param(*weights.f_struct);
  ins.mapped[static_cast<int>(SlotKind::word_head)] = ops::matmul(ins.w_eh, f_word);
  ins.mapped[static_cast<int>(SlotKind::struct_head)] = ops::matmul(state.head_entity(), f_struct);
  ins.mapped[static_cast<int>(SlotKind::word_rel)] = ops::matmul(ins.w_rq, f_word);
  ins.mapped[static_cast<int>(SlotKind::struct_rel)] = ops::matmul(state.query_relation(), f_struct);

  for (int e : top_k(struct_scores, cfg.vocab_items + 1)) {
    if (e != query.head && static_cast<int>(ins.vocabulary_entities.size()) < cfg.vocab_items) {
      ins.vocabulary_entities.push_back(e);
    }
  }

  const std::vector<int> newline = tokenizer.encode("\n");
  std::vector<Piece> pieces;
  auto add_line = [&](std::vector<int> toks) {
    append(toks, newline);
    pieces.push_back(Piece{std::move(toks), -1});
  };
  auto entity_line = [&](int e) {
    const auto i = static_cast<std::size_t>(e);
    const std::string& pat = text.entity_desc[i].empty() ? tpl.entity_line_bare : tpl.entity_line;
    return render_item(pat, text.entity_name[i], text.entity_desc[i], tokenizer);
  };
  add_line(tokenizer.encode(tpl.preamble));
  add_line(tokenizer.encode(tpl.vocabulary_header));
  add_line(entity_line(query.head));
  {
    const auto i = static_cast<std::size_t>(query.rel);
    const std::string& pat = text.relation_desc[i].empty() ? tpl.relation_line_bare : tpl.relation_line;
    add_line(render_item(pat, text.relation_name[i], text.relation_desc[i], tokenizer));
  }
  for (int e : ins.vocabulary_entities) add_line(entity_line(e));
  for (Piece& p : render_query(tpl.query, tokenizer)) pieces.push_back(std::move(p));

  std::vector<Var> blocks;
  std::vector<int> run;
  auto flush = [&] {
    if (run.empty()) return;
    blocks.push_back(backbone.embed(tape, run));
    run.clear();
  };
  for (const Piece& p : pieces) {
    if (p.slot < 0) {
      append(run, p.tokens);
      append(ins.token_ids, p.tokens);
    } else {
      flush();
      ins.slots.push_back(Slot{static_cast<int>(ins.token_ids.size()), static_cast<SlotKind>(p.slot)});
      ins.token_ids.push_back(-1);
      blocks.push_back(ins.mapped[p.slot]);
    }
  }
  flush();
  const int m = ins.length();
  if (m > backbone.config().max_seq_len) {
    throw ContractError(fmt::format("instruction: length {} exceeds the backbone maximum of {}", m,
                                    backbone.config().max_seq_len));
  }
  const auto n = ins.slots.size();
  if (n < 2 || ins.slots[n - 1].position != m - 1 || ins.slots[n - 1].kind != SlotKind::word_rel ||
      ins.slots[n - 2].position != m - 2 || ins.slots[n - 2].kind != SlotKind::word_head) {
    throw ContractError("instruction template: the query line must end with {W_EH} {W_RQ}");
  }
  ins.T = ops::concat_rows(blocks);
  return ins;
}

}  // namespace krlm
