// SPDX-License-Identifier: Apache-2.0

#include "krlm/commands.hpp"

#include "krlm/evaluator.hpp"
#include "krlm/trainer.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace fs = std::filesystem;

namespace krlm {

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

nlohmann::json read_json_file(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::vector<fs::path> dataset_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const char* name : {"entities.tsv", "relations.tsv", "train.tsv", "valid.tsv", "test.tsv", "dataset.json",
                           "test/entities.tsv", "test/graph.tsv", "test/test.tsv"}) {
    if (fs::exists(dir / name)) out.push_back(name);
  }
  return out;
}

std::vector<std::string> tokenizer_corpus(const KnowledgeGraph& kg) {
  std::vector<std::string> corpus;
  for (const EntityRecord& e : kg.entities()) {
    corpus.push_back(e.name);
    corpus.push_back(e.description);
  }
  for (const RelationRecord& r : kg.relations()) {
    if (r.is_inverse) continue;
    corpus.push_back(r.name);
    corpus.push_back(r.description);
  }
  return corpus;
}

void require_path(const fs::path& p, std::string_view key) {
  if (p.empty()) throw UsageError(fmt::format("missing required option --{}", key));
}

}  // namespace

std::string git_blob_hash(std::string_view bytes) {
  const std::string header = fmt::format("blob {}", bytes.size());
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size() + 1);  // includes the NUL
  EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

std::string git_blob_hash_file(const fs::path& path) { return git_blob_hash(read_file(path)); }

void write_relational_graph(const fs::path& path, const RelationalGraph& rg) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << rg.node_count << '\t' << rg.edges.size() << '\n';
  for (const TypedEdge& e : rg.edges) os << e.src << '\t' << e.type << '\t' << e.dst << '\n';
}

RelationalGraph read_relational_graph(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  RelationalGraph rg;
  std::size_t count = 0;
  if (!(in >> rg.node_count >> count)) throw DataError(path.string() + ": bad header");
  rg.edges.resize(count);
  for (TypedEdge& e : rg.edges) {
    if (!(in >> e.src >> e.type >> e.dst)) throw DataError(path.string() + ": truncated");
  }
  return rg;
}

nlohmann::json run_prepare(const RunConfig& cfg, std::ostream& log) {
  require_path(cfg.data, "data");
  require_path(cfg.work, "work");
  const Dataset ds = load_dataset(cfg.data);
  fs::create_directories(cfg.work);

  const Tokenizer tokenizer =
      Tokenizer::build(tokenizer_corpus(ds.train_graph), static_cast<std::size_t>(cfg.model.backbone.vocab_size));
  tokenizer.save(cfg.work / "tokenizer.vocab");
  const RelationalGraph train_rg = build_relational_graph(ds.train_graph);
  const RelationalGraph test_rg = build_relational_graph(ds.test_graph);
  write_relational_graph(cfg.work / "relational_train.tsv", train_rg);
  write_relational_graph(cfg.work / "relational_test.tsv", test_rg);

  nlohmann::json inputs = nlohmann::json::object();
  for (const fs::path& f : dataset_files(cfg.data)) inputs[f.generic_string()] = git_blob_hash_file(cfg.data / f);
  nlohmann::json info{
      {"dataset", ds.name},
      {"data", ds.source},
      {"inductive", ds.inductive},
      {"inputs", inputs},
      {"counts",
       {{"relations", ds.train_graph.base_relation_count()},
        {"train_entities", ds.train_graph.entity_count()},
        {"train_triplets", ds.train_graph.triplets().size() / 2},
        {"valid", ds.valid.size()},
        {"test_entities", ds.test_graph.entity_count()},
        {"test_graph_triplets", ds.test_graph.triplets().size() / 2},
        {"test", ds.test.size()}}},
      {"tokenizer",
       {{"file", "tokenizer.vocab"},
        {"size", tokenizer.size()},
        {"corpus", "training-graph entity and relation names and descriptions"},
        {"hash", git_blob_hash_file(cfg.work / "tokenizer.vocab")}}},
      {"relational",
       {{"train", {{"file", "relational_train.tsv"}, {"edges", train_rg.edges.size()}}},
        {"test", {{"file", "relational_test.tsv"}, {"edges", test_rg.edges.size()}}}}}};
  write_json_file(cfg.work / "prepare.json", info);
  log << fmt::format("prepared {}: {} train / {} test entities, {} relations, tokenizer {} tokens\n", ds.name,
                     ds.train_graph.entity_count(), ds.test_graph.entity_count(), ds.train_graph.base_relation_count(),
                     tokenizer.size());
  return info;
}

std::unique_ptr<Prepared> load_prepared(const fs::path& work, const InstructionConfig& instruction) {
  const fs::path info_path = work / "prepare.json";
  if (!fs::exists(info_path)) throw DataError(fmt::format("{} not found; run `krlm prepare` first", info_path.string()));
  auto p = std::make_unique<Prepared>();
  p->work = work;
  p->info = read_json_file(info_path);
  const fs::path data = p->info.at("data").get<std::string>();
  for (const auto& [file, hash] : p->info.at("inputs").items()) {
    if (!fs::exists(data / file) || git_blob_hash_file(data / file) != hash.get<std::string>()) {
      throw DataError(fmt::format("dataset file {} changed since prepare; rerun `krlm prepare`", (data / file).string()));
    }
  }
  p->dataset = load_dataset(data);
  p->tokenizer = Tokenizer::load(work / "tokenizer.vocab");
  RelationalGraph train_rg = read_relational_graph(work / "relational_train.tsv");
  RelationalGraph test_rg = read_relational_graph(work / "relational_test.tsv");
  p->train_ctx = GraphContext::build(p->dataset.train_graph, std::move(train_rg), p->tokenizer, instruction);
  p->test_ctx = GraphContext::build(p->dataset.test_graph, std::move(test_rg), p->tokenizer, instruction);
  return p;
}

std::unique_ptr<KrlmModel> load_model(const fs::path& checkpoint, const Tokenizer& tokenizer, const RunConfig* overrides) {
  const Checkpoint ckpt = read_checkpoint(checkpoint);
  if (!ckpt.manifest.contains("model")) throw DataError(checkpoint.string() + ": manifest lacks the model config");
  ModelConfig mc = ModelConfig::from_json(ckpt.manifest.at("model"));
  if (overrides != nullptr && overrides->explicit_keys.contains("memory-k")) mc.memory_k = overrides->model.memory_k;
  auto model = std::make_unique<KrlmModel>(mc, tokenizer);
  restore(model->params(), ckpt);
  return model;
}

namespace {

// Model and prepared data whose graph text follows the checkpoint's instruction settings.
std::pair<std::unique_ptr<Prepared>, std::unique_ptr<KrlmModel>> load_for_inference(const RunConfig& cfg) {
  const Tokenizer tokenizer = Tokenizer::load(cfg.work / "tokenizer.vocab");
  auto model = load_model(cfg.checkpoint, tokenizer, &cfg);
  auto prepared = load_prepared(cfg.work, model->config().instruction);
  return {std::move(prepared), std::move(model)};
}

}  // namespace

nlohmann::json run_train(const RunConfig& cfg, TrainMode mode, std::ostream& log) {
  require_path(cfg.work, "work");
  require_path(cfg.out, "out");
  auto prepared = load_prepared(cfg.work, cfg.model.instruction);
  const Dataset& ds = prepared->dataset;

  TrainConfig tc = cfg.train;
  tc.mode = mode;
  nlohmann::json source = nullptr;
  std::unique_ptr<KrlmModel> model;
  if (mode == TrainMode::finetune) {
    require_path(cfg.checkpoint, "checkpoint");
    model = load_model(cfg.checkpoint, prepared->tokenizer, &cfg);
    source = {{"path", fs::absolute(cfg.checkpoint).lexically_normal().string()},
              {"hash", git_blob_hash_file(cfg.checkpoint)}};
    if (!cfg.explicit_keys.contains("epochs")) tc.epochs = finetune_epochs(ds.name);
  } else {
    model = std::make_unique<KrlmModel>(cfg.model, prepared->tokenizer);
    if (mode == TrainMode::pretrain) {
      if (!cfg.explicit_keys.contains("epochs")) tc.epochs = 20;
      if (!cfg.explicit_keys.contains("steps-per-epoch")) tc.steps_per_epoch = 10000;
    }
  }
  const std::uint64_t frozen_before = model->params().checksum(false);

  nlohmann::json manifest{{"command", std::string(train_mode_name(mode))},
                          {"seed", cfg.seed},
                          {"dataset", ds.name},
                          {"config", cfg.to_json()},
                          {"train", tc.to_json()},
                          {"model", model->config().to_json()},
                          {"inputs", prepared->info.at("inputs")},
                          {"tokenizer_hash", prepared->info.at("tokenizer").at("hash")},
                          {"source_checkpoint", source},
                          {"initial_checksum",
                           {{"trainable", fmt::format("{:016x}", model->params().checksum(true))},
                            {"frozen", fmt::format("{:016x}", frozen_before)}}}};
  fs::create_directories(cfg.out);
  write_json_file(cfg.out / "manifest.json", manifest);

  TrainOutputs outputs;
  outputs.dir = cfg.out;
  outputs.manifest = manifest;
  outputs.log = [&log](const std::string& line) { log << line << '\n' << std::flush; };
  const TrainResult result = train(*model, prepared->train_ctx, ds.valid, tc, outputs);

  if (model->params().checksum(false) != frozen_before) throw NumericError("frozen backbone changed during training");
  manifest["result"] = {{"steps", result.total_steps},
                        {"best_step", result.best_step},
                        {"best_valid_mrr", result.best_valid_mrr},
                        {"final_checksum",
                         {{"trainable", fmt::format("{:016x}", model->params().checksum(true))},
                          {"frozen", fmt::format("{:016x}", model->params().checksum(false))}}}};
  write_json_file(cfg.out / "manifest.json", manifest);
  return manifest;
}

nlohmann::json run_evaluate(const RunConfig& cfg, std::ostream& log) {
  require_path(cfg.work, "work");
  require_path(cfg.checkpoint, "checkpoint");
  require_path(cfg.out, "out");
  if (!fs::exists(cfg.work / "prepare.json")) throw DataError("work directory is not prepared: " + cfg.work.string());
  auto [prepared, model] = load_for_inference(cfg);
  const Dataset& ds = prepared->dataset;

  std::vector<std::vector<Triplet>> extra;
  if (!ds.inductive) extra.push_back(ds.valid);
  extra.push_back(ds.test);
  const KnownAnswers known(ds.test_graph, extra);

  fs::create_directories(cfg.out);
  std::ofstream scores(cfg.out / "scores.jsonl", std::ios::trunc);
  std::ofstream predictions(cfg.out / "predictions.jsonl", std::ios::trunc);
  EvalOptions eo;
  eo.protocol = cfg.protocol;
  eo.jobs = cfg.jobs;
  eo.limit = cfg.limit;
  eo.precision = cfg.precision;
  eo.score_dump = &scores;
  eo.prediction_dump = &predictions;
  const EvalReport report = rank_queries(*model, prepared->test_ctx, ds.test, known, eo);
  nlohmann::json metrics = report.to_json(ds.name);
  metrics["precision"] = std::string(precision_name(cfg.precision));
  write_json_file(cfg.out / "metrics.json", metrics);
  write_json_file(cfg.out / "manifest.json", {{"command", "evaluate"},
                                              {"seed", cfg.seed},
                                              {"config", cfg.to_json()},
                                              {"checkpoint",
                                               {{"path", fs::absolute(cfg.checkpoint).lexically_normal().string()},
                                                {"hash", git_blob_hash_file(cfg.checkpoint)}}},
                                              {"inputs", prepared->info.at("inputs")},
                                              {"model", model->config().to_json()}});
  log << fmt::format("{} {}: MRR {:.4f}  Hit@10 {:.4f}  ({} queries)\n", ds.name, protocol_name(cfg.protocol),
                     report.pooled.mrr, report.pooled.hit10, report.pooled.count);
  return metrics;
}

nlohmann::json run_inspect(const RunConfig& cfg, const QueryTriplet& query, std::ostream& log) {
  require_path(cfg.work, "work");
  require_path(cfg.checkpoint, "checkpoint");
  require_path(cfg.out, "out");
  if (!fs::exists(cfg.work / "prepare.json")) throw DataError("work directory is not prepared: " + cfg.work.string());
  auto [prepared, model] = load_for_inference(cfg);
  const KnowledgeGraph& kg = prepared->dataset.test_graph;
  if (query.head < 0 || query.head >= kg.entity_count() || query.rel < 0 || query.rel >= kg.relation_count()) {
    throw DataError("inspect: query references an entity or relation outside the test graph");
  }
  fs::create_directories(cfg.out);
  std::ofstream os(cfg.out / "attention.jsonl", std::ios::trunc);
  const AttentionTrace trace = export_attention(*model, prepared->test_ctx, query, os, cfg.precision);
  nlohmann::json summary{{"head", query.head},
                         {"relation", query.rel},
                         {"answer", query.answer ? nlohmann::json(*query.answer) : nlohmann::json(nullptr)},
                         {"layers", trace.layers.size()},
                         {"memory_entity_ids", trace.memory_ids}};
  if (query.answer) {
    const auto it = std::find(trace.memory_ids.begin(), trace.memory_ids.end(), *query.answer);
    summary["answer_memory_slot"] =
        it == trace.memory_ids.end() ? nlohmann::json(nullptr) : nlohmann::json(it - trace.memory_ids.begin());
  }
  log << fmt::format("wrote {} layer traces to {}\n", trace.layers.size(), (cfg.out / "attention.jsonl").string());
  return summary;
}

}  // namespace krlm
