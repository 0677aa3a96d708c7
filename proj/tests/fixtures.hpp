// SPDX-License-Identifier: Apache-2.0
//
// Small models and graphs shared by several test files.

#pragma once

#include "krlm/gradcheck.hpp"
#include "krlm/model.hpp"

#include <memory>
#include <random>
#include <string>
#include <vector>

namespace fixture {

inline krlm::ModelConfig tiny_config(int memory_k = 4) {
  krlm::ModelConfig cfg;
  cfg.backbone.layers = 1;
  cfg.backbone.hidden = 16;
  cfg.backbone.vocab_size = 400;
  cfg.encoder.layers = 2;
  cfg.encoder.hidden = 8;
  cfg.instruction.vocab_items = 3;
  cfg.instruction.desc_tokens = 8;
  cfg.memory_k = memory_k;
  return cfg;
}

inline krlm::Tokenizer tokenizer_for(const krlm::KnowledgeGraph& kg, std::size_t size = 400) {
  std::vector<std::string> corpus;
  for (const auto& e : kg.entities()) {
    corpus.push_back(e.name);
    corpus.push_back(e.description);
  }
  for (const auto& r : kg.relations()) {
    corpus.push_back(r.name);
    corpus.push_back(r.description);
  }
  return krlm::Tokenizer::build(corpus, size);
}

struct Tiny {
  std::mt19937_64 rng;
  krlm::KnowledgeGraph kg;
  std::unique_ptr<krlm::KrlmModel> model;
  std::unique_ptr<krlm::GraphContext> ctx;

  explicit Tiny(int entities = 12, int relations = 3, int triplets = 20, int memory_k = 4, std::uint64_t seed = 41)
      : rng(seed), kg(krlm::random_graph(entities, relations, triplets, rng)) {
    model = std::make_unique<krlm::KrlmModel>(tiny_config(memory_k), tokenizer_for(kg));
    ctx = std::make_unique<krlm::GraphContext>(
        krlm::GraphContext::build(kg, model->tokenizer(), model->config().instruction));
  }
};

}  // namespace fixture
