// SPDX-License-Identifier: Apache-2.0
//
// A miniature frozen decoder language model: subword tokenizer, token
// embedding table, pre-norm attention/FFN weights and a projection head tied
// to the embedding table at initialisation.

#pragma once

#include "krlm/params.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace krlm {

/// Greedy longest-match subword tokenizer with byte fallback.
///
/// Ids 0..255 are the raw bytes, so every string is encodable and
/// decode(encode(s)) == s for any byte sequence. Multi-byte tokens never
/// contain ASCII whitespace and never cross a whitespace boundary.
class Tokenizer {
 public:
  static constexpr int kByteTokens = 256;

  Tokenizer();
  // Builds a vocabulary of at most vocab_size tokens: the 256 bytes, then
  // corpus words by frequency, then frequent in-word character n-grams.
  static Tokenizer build(std::span<const std::string> corpus, std::size_t vocab_size);

  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  bool is_byte(int id) const { return id >= 0 && id < kByteTokens; }

  // Vocabulary file: `token<TAB>id` per line; byte tokens as <0xNN>.
  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);
  std::string fingerprint() const;

 private:
  void add(std::string tok);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::size_t max_len_ = 1;
};

struct BackboneConfig {
  int layers = 2;
  int hidden = 128;
  int vocab_size = 2048;
  int ffn_inner = 0;  // 0 means 4 * hidden
  std::uint64_t seed = 0;
  int max_seq_len = 1024;

  int inner() const { return ffn_inner > 0 ? ffn_inner : 4 * hidden; }
  void validate() const;
};

class Backbone {
 public:
  struct Layer {
    Parameter* wq = nullptr;
    Parameter* wk = nullptr;
    Parameter* wv = nullptr;
    Parameter* ffn_in = nullptr;
    Parameter* ffn_out = nullptr;
    Parameter* norm_attn = nullptr;
    Parameter* norm_ffn = nullptr;
  };

  Backbone() = default;
  // Registers frozen parameters under "backbone." with deterministic weights.
  static Backbone init(const BackboneConfig& cfg, std::size_t vocab_rows, ParameterStore& store);

  const BackboneConfig& config() const { return cfg_; }
  int hidden() const { return cfg_.hidden; }
  int layer_count() const { return static_cast<int>(layers_.size()); }
  const Layer& layer(int n) const { return layers_.at(static_cast<std::size_t>(n)); }
  const Matrix& embedding() const { return emb_->value; }
  const Matrix& head() const { return head_->value; }
  const Matrix& final_norm() const { return final_norm_->value; }

  Var embed(Tape& tape, std::span<const int> ids) const;
  // Sinusoidal positions scaled by 1/sqrt(F) to match embedding row norms.
  Matrix positions(Index m) const;

  // FFN sub-block with its residual: h + W_out relu(W_in norm(h)).
  Var feed_forward(const Var& h, int n) const;

 private:
  BackboneConfig cfg_;
  Parameter* emb_ = nullptr;
  Parameter* head_ = nullptr;
  Parameter* final_norm_ = nullptr;
  std::vector<Layer> layers_;
};

}  // namespace krlm
