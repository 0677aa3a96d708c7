// SPDX-License-Identifier: Apache-2.0
//
// The batch commands behind the `krlm` executable: prepare a dataset cache,
// train, evaluate and inspect. Every command writes a manifest next to its
// outputs.

#pragma once

#include "krlm/config.hpp"
#include "krlm/dataset.hpp"
#include "krlm/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <ostream>
#include <string>

namespace krlm {

// Git object id of a blob: SHA-1 over "blob <size>\0" followed by the bytes.
std::string git_blob_hash(std::string_view bytes);
std::string git_blob_hash_file(const std::filesystem::path& path);

// Relational graph cache: header line `nodes<TAB>edges`, then src, pattern, dst.
void write_relational_graph(const std::filesystem::path& path, const RelationalGraph& rg);
RelationalGraph read_relational_graph(const std::filesystem::path& path);

// Contents of a prepared work directory. Graph contexts point into `dataset`.
struct Prepared {
  std::filesystem::path work;
  Dataset dataset;
  Tokenizer tokenizer;
  nlohmann::json info;
  GraphContext train_ctx;
  GraphContext test_ctx;
};

// Loads and validates cfg.data, builds the tokenizer and both relational
// graphs, and writes them with prepare.json into cfg.work.
nlohmann::json run_prepare(const RunConfig& cfg, std::ostream& log);
std::unique_ptr<Prepared> load_prepared(const std::filesystem::path& work, const InstructionConfig& instruction);

// Model from a checkpoint written by the trainer (architecture from its manifest).
std::unique_ptr<KrlmModel> load_model(const std::filesystem::path& checkpoint, const Tokenizer& tokenizer,
                                      const RunConfig* overrides = nullptr);

// Trains into cfg.out; returns the run manifest.
nlohmann::json run_train(const RunConfig& cfg, TrainMode mode, std::ostream& log);

// Evaluates cfg.checkpoint on the test split; writes metrics.json, scores.jsonl
// and predictions.jsonl into cfg.out and returns the metrics.
nlohmann::json run_evaluate(const RunConfig& cfg, std::ostream& log);

// Attention trace for one directed query into cfg.out/attention.jsonl.
nlohmann::json run_inspect(const RunConfig& cfg, const QueryTriplet& query, std::ostream& log);

}  // namespace krlm
