// SPDX-License-Identifier: Apache-2.0

#include "krlm/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <fmt/format.h>

namespace krlm {

namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

// Splits text into maximal non-whitespace runs.
std::vector<std::string_view> words_of(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.push_back(text.substr(start, i - start));
  }
  return out;
}

bool is_continuation(unsigned char c) { return (c & 0xC0) == 0x80; }

std::string escape_token(const std::string& tok) {
  std::string out;
  for (std::size_t i = 0; i < tok.size(); ++i) {
    const char c = tok[i];
    if (c == '\\') {
      out += "\\\\";
    } else if (i == 0 && c == '<') {
      out += "\\<";
    } else {
      out += c;
    }
  }
  return out;
}

std::string unescape_token(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      out += s[++i];
    } else {
      out += s[i];
    }
  }
  return out;
}

}  // namespace

Tokenizer::Tokenizer() {
  for (int b = 0; b < kByteTokens; ++b) {
    tokens_.emplace_back(1, static_cast<char>(b));
    index_.emplace(tokens_.back(), b);
  }
}

void Tokenizer::add(std::string tok) {
  if (index_.count(tok) != 0) return;
  max_len_ = std::max(max_len_, tok.size());
  index_.emplace(tok, static_cast<int>(tokens_.size()));
  tokens_.push_back(std::move(tok));
}

Tokenizer Tokenizer::build(std::span<const std::string> corpus, std::size_t vocab_size) {
  Tokenizer tk;
  std::map<std::string, std::int64_t> word_freq;
  std::map<std::string, std::int64_t> gram_freq;
  for (const std::string& doc : corpus) {
    for (std::string_view w : words_of(doc)) {
      ++word_freq[std::string(w)];
      // Character n-grams (2..6 code points) that start and end on code point boundaries.
      std::vector<std::size_t> cuts;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (!is_continuation(static_cast<unsigned char>(w[i]))) cuts.push_back(i);
      }
      cuts.push_back(w.size());
      for (std::size_t a = 0; a + 1 < cuts.size(); ++a) {
        for (std::size_t n = 2; n <= 6 && a + n < cuts.size(); ++n) {
          ++gram_freq[std::string(w.substr(cuts[a], cuts[a + n] - cuts[a]))];
        }
      }
    }
  }
  auto ranked = [](const std::map<std::string, std::int64_t>& freq) {
    std::vector<std::pair<std::string, std::int64_t>> v(freq.begin(), freq.end());
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    return v;
  };
  for (const auto& [w, f] : ranked(word_freq)) {
    if (tk.size() >= vocab_size) break;
    if (w.size() > 1 && f >= 2) tk.add(w);
  }
  for (const auto& [g, f] : ranked(gram_freq)) {
    if (tk.size() >= vocab_size) break;
    if (f >= 2) tk.add(g);
  }
  // Singletons last, words before grams.
  for (const auto& [w, f] : ranked(word_freq)) {
    if (tk.size() >= vocab_size) break;
    if (w.size() > 1) tk.add(w);
  }
  return tk;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> out;
  std::size_t i = 0;
  std::string probe;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      out.push_back(c);
      ++i;
      continue;
    }
    std::size_t end = i;
    while (end < text.size() && !is_space(static_cast<unsigned char>(text[end]))) ++end;
    const std::size_t limit = std::min(max_len_, end - i);
    int match = c;
    std::size_t match_len = 1;
    for (std::size_t len = limit; len >= 2; --len) {
      probe.assign(text.substr(i, len));
      auto it = index_.find(probe);
      if (it != index_.end()) {
        match = it->second;
        match_len = len;
        break;
      }
    }
    out.push_back(match);
    i += match_len;
  }
  return out;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) out += token(id);
  return out;
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write vocabulary: " + path.string());
  for (std::size_t id = 0; id < tokens_.size(); ++id) {
    if (id < static_cast<std::size_t>(kByteTokens)) {
      os << fmt::format("<0x{:02X}>\t{}\n", id, id);
    } else {
      os << escape_token(tokens_[id]) << '\t' << id << '\n';
    }
  }
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open vocabulary: " + path.string());
  Tokenizer tk;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw std::runtime_error(fmt::format("{}:{}: malformed vocabulary row", path.string(), lineno));
    const int id = std::stoi(line.substr(tab + 1));
    if (id < kByteTokens) continue;
    if (id != static_cast<int>(tk.size())) {
      throw std::runtime_error(fmt::format("{}:{}: vocabulary ids must be dense", path.string(), lineno));
    }
    tk.add(unescape_token(std::string_view(line).substr(0, tab)));
  }
  return tk;
}

std::string Tokenizer::fingerprint() const {
  std::string all;
  for (const auto& t : tokens_) {
    all += t;
    all.push_back('\0');
  }
  return hash_hex(all);
}

// Backbone --------------------------------------------------------------------

void BackboneConfig::validate() const {
  if (layers < 1) throw ContractError("backbone: layers must be >= 1");
  if (hidden < 8 || hidden % 2 != 0) throw ContractError("backbone: hidden dim must be even and >= 8");
  if (vocab_size < 64) throw ContractError("backbone: vocab size must be >= 64");
  if (inner() < 1) throw ContractError("backbone: ffn inner dim must be positive");
  if (max_seq_len < 2) throw ContractError("backbone: max sequence length must be >= 2");
}

Backbone Backbone::init(const BackboneConfig& cfg, std::size_t vocab_rows, ParameterStore& store) {
  cfg.validate();
  if (vocab_rows < 64) throw ContractError("backbone: vocabulary has fewer than 64 tokens");
  Backbone bb;
  bb.cfg_ = cfg;
  std::mt19937_64 rng(cfg.seed ^ 0x6b726c6d2d62626eULL);
  const Index f = cfg.hidden;
  const double s = 1.0 / std::sqrt(static_cast<double>(f));
  Matrix emb = gaussian_init(static_cast<Index>(vocab_rows), f, s, rng);
  bb.emb_ = &store.add("backbone.emb", emb, false);
  bb.head_ = &store.add("backbone.head", std::move(emb), false);
  for (int n = 0; n < cfg.layers; ++n) {
    const std::string p = fmt::format("backbone.layer{}.", n);
    Layer l;
    l.wq = &store.add(p + "wq", gaussian_init(f, f, s, rng), false);
    l.wk = &store.add(p + "wk", gaussian_init(f, f, s, rng), false);
    l.wv = &store.add(p + "wv", gaussian_init(f, f, s, rng), false);
    l.ffn_in = &store.add(p + "ffn_in", gaussian_init(f, cfg.inner(), s, rng), false);
    l.ffn_out = &store.add(p + "ffn_out", gaussian_init(cfg.inner(), f, 1.0 / std::sqrt(static_cast<double>(cfg.inner())), rng), false);
    l.norm_attn = &store.add(p + "norm_attn", Matrix::Ones(1, f), false);
    l.norm_ffn = &store.add(p + "norm_ffn", Matrix::Ones(1, f), false);
    bb.layers_.push_back(l);
  }
  bb.final_norm_ = &store.add("backbone.final_norm", Matrix::Ones(1, f), false);
  return bb;
}

Var Backbone::embed(Tape& tape, std::span<const int> ids) const {
  return ops::gather_rows_const(tape, embedding(), ids);
}

Matrix Backbone::positions(Index m) const {
  const Index f = cfg_.hidden;
  const double s = 1.0 / std::sqrt(static_cast<double>(f));
  Matrix pe(m, f);
  for (Index pos = 0; pos < m; ++pos) {
    for (Index k = 0; k < f / 2; ++k) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(f));
      pe(pos, 2 * k) = s * std::sin(static_cast<double>(pos) * freq);
      pe(pos, 2 * k + 1) = s * std::cos(static_cast<double>(pos) * freq);
    }
  }
  return pe;
}

Var Backbone::feed_forward(const Var& h, int n) const {
  const Layer& l = layer(n);
  Tape& tape = *h.tape();
  Var x = ops::rms_norm(h, l.norm_ffn->value);
  Var inner = ops::relu(ops::matmul(x, tape.param(*l.ffn_in)));
  return ops::add(h, ops::matmul(inner, tape.param(*l.ffn_out)));
}

}  // namespace krlm
