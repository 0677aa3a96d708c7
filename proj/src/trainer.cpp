// SPDX-License-Identifier: Apache-2.0

#include "krlm/trainer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <fmt/format.h>

namespace fs = std::filesystem;

namespace krlm {

std::vector<int> sample_negatives(const QueryTriplet& query, int entity_count, int n, std::mt19937_64& rng,
                                  bool* with_replacement) {
  if (n < 1) throw ContractError("sample_negatives: n must be >= 1");
  if (entity_count < 2) throw ContractError("sample_negatives: graph has fewer than 2 entities");
  const int exclude = query.answer.value_or(-1);
  std::vector<int> pool;
  pool.reserve(static_cast<std::size_t>(entity_count));
  for (int e = 0; e < entity_count; ++e) {
    if (e != exclude) pool.push_back(e);
  }
  const int m = static_cast<int>(pool.size());
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n));
  if (m < n) {
    if (with_replacement != nullptr) *with_replacement = true;
    std::uniform_int_distribution<int> pick(0, m - 1);
    for (int i = 0; i < n; ++i) out.push_back(pool[static_cast<std::size_t>(pick(rng))]);
    return out;
  }
  if (with_replacement != nullptr) *with_replacement = false;
  // Partial Fisher-Yates.
  for (int i = 0; i < n; ++i) {
    std::uniform_int_distribution<int> pick(i, m - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
    out.push_back(pool[static_cast<std::size_t>(i)]);
  }
  return out;
}

CandidateLogits gather_candidates(const Var& logits, std::vector<int> candidates) {
  CandidateLogits c;
  c.logits = ops::gather_rows(logits, candidates);
  c.candidates = std::move(candidates);
  return c;
}

nlohmann::json LossBreakdown::to_json() const {
  return {{"total", total},
          {"bce_struct", bce_struct},
          {"bce_krlm", bce_krlm},
          {"kl_s2k", kl_struct_to_krlm},
          {"kl_k2s", kl_krlm_to_struct}};
}

namespace {

Var bce(const Var& x, BceSign sign) {
  const Index n = x.rows() - 1;
  Var pos = ops::softplus(ops::scale(ops::slice_rows(x, 0, 1), -1.0));  // -log sigmoid(x+)
  Var neg = ops::mean(ops::softplus(ops::slice_rows(x, 1, n)));         // -mean log(1 - sigmoid(x-))
  return sign == BceSign::standard ? ops::add(pos, neg) : ops::sub(pos, neg);
}

// KL(softmax(p) || softmax(q)) over candidate logits given as column vectors.
Var kl(const Var& p, const Var& q) {
  Var lp = ops::log_softmax_rows(ops::transpose(p));
  Var lq = ops::log_softmax_rows(ops::transpose(q));
  return ops::sum(ops::mul(ops::exp(lp), ops::sub(lp, lq)));
}

}  // namespace

LossResult compute_loss(const CandidateLogits& structural, const CandidateLogits& krlm, double lambda, BceSign sign) {
  if (structural.candidates != krlm.candidates) throw ContractError("compute_loss: candidate lists differ");
  if (structural.candidates.size() < 2) throw ContractError("compute_loss: need a positive and at least one negative");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("compute_loss: lambda must lie in [0, 1]");
  const Var& s = structural.logits;
  const Var& k = krlm.logits;
  Var bce_k = bce(k, sign);
  Var bce_s = bce(s, sign);
  Var kl_sk = kl(s, k);
  Var kl_ks = kl(k, s);
  Var total = ops::add(ops::scale(ops::add(bce_k, bce_s), 1.0 - lambda), ops::scale(ops::add(kl_sk, kl_ks), lambda));
  LossResult r;
  r.total = total;
  r.parts = LossBreakdown{bce_k.scalar(), bce_s.scalar(), kl_sk.scalar(), kl_ks.scalar(), total.scalar(), lambda};
  return r;
}

TrainMode parse_train_mode(std::string_view s) {
  if (s == "pretrain") return TrainMode::pretrain;
  if (s == "finetune") return TrainMode::finetune;
  if (s == "e2e" || s == "train-e2e") return TrainMode::e2e;
  throw ContractError(fmt::format("unknown training mode '{}'", s));
}

std::string_view train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::pretrain: return "pretrain";
    case TrainMode::finetune: return "finetune";
    case TrainMode::e2e: return "e2e";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ContractError("epochs must be >= 0");
  if (steps_per_epoch < 0) throw ContractError("steps-per-epoch must be >= 0");
  if (batch < 1) throw ContractError("batch-size must be >= 1");
  if (negatives < 1) throw ContractError("negatives must be >= 1");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("lambda must lie in [0, 1]");
  if (optimizer.accumulation < 1) throw ContractError("accumulation must be >= 1");
  if (!(optimizer.learning_rate > 0.0)) throw ContractError("learning-rate must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"mode", train_mode_name(mode)},
          {"epochs", epochs},
          {"steps_per_epoch", steps_per_epoch},
          {"batch", batch},
          {"negatives", negatives},
          {"lambda", lambda},
          {"bce_sign", sign == BceSign::standard ? "standard" : "as_printed"},
          {"seed", seed},
          {"learning_rate", optimizer.learning_rate},
          {"weight_decay", optimizer.weight_decay},
          {"warmup_fraction", optimizer.warmup_fraction},
          {"accumulation", optimizer.accumulation},
          {"valid_every", valid_every},
          {"valid_limit", valid_limit},
          {"model_selection", "fused filtered MRR on validation triplets"}};
}

int finetune_epochs(std::string_view dataset) {
  std::string key;
  for (char c : dataset) {
    if (std::isalnum(static_cast<unsigned char>(c))) key += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  static const std::map<std::string, int, std::less<>> table = {
      {"fbv1", 3},  {"fbv2", 3},  {"fbv3", 5},  {"fbv4", 5},  {"nellv1", 3}, {"nellv2", 3}, {"nellv3", 5},
      {"nellv4", 3}, {"wnv1", 3},  {"wnv2", 5},  {"wnv3", 5},  {"wnv4", 3},   {"fb25", 10},  {"fb50", 10},
      {"fb75", 10}, {"fb100", 10}, {"nl0", 3},   {"nl25", 5},  {"nl50", 5},   {"nl75", 5},   {"nl100", 3},
      {"wk25", 10}, {"wk50", 10}, {"wk75", 10}, {"wk100", 10}};
  for (const auto& [name, epochs] : table) {
    if (key.rfind(name, 0) == 0 && (key.size() == name.size() || !std::isdigit(static_cast<unsigned char>(key[name.size()])))) {
      return epochs;
    }
  }
  return 3;
}

namespace {

void write_json_line(std::ofstream* os, const nlohmann::json& j) {
  if (os != nullptr) {
    *os << j.dump() << '\n';
    os->flush();
  }
}

}  // namespace

TrainResult train(KrlmModel& model, const GraphContext& ctx, std::span<const Triplet> valid,
                  const TrainConfig& cfg, const TrainOutputs& out) {
  cfg.validate();
  const KnowledgeGraph& train_graph = *ctx.kg;
  if (!train_graph.augmented()) throw ContractError("train: graph must carry inverse relations");
  const auto& triplets = train_graph.triplets();
  const int n_dir = static_cast<int>(triplets.size());
  if (n_dir == 0) throw DataError("train: training graph has no triplets");
  const int half = n_dir / 2;

  const int steps_per_epoch = cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch : (n_dir + cfg.batch - 1) / cfg.batch;
  const int total_steps = cfg.epochs * steps_per_epoch;
  OptimizerConfig ocfg = cfg.optimizer;
  ocfg.total_updates = std::max<std::int64_t>(1, (total_steps + ocfg.accumulation - 1) / ocfg.accumulation);
  AdamW opt(ocfg, model.params());

  const std::vector<std::vector<Triplet>> extra = {std::vector<Triplet>(valid.begin(), valid.end())};
  const KnownAnswers known(train_graph, extra);

  std::mt19937_64 rng(cfg.seed ^ 0x747261696eULL);
  std::vector<int> order(static_cast<std::size_t>(n_dir));
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  std::unique_ptr<std::ofstream> metrics;
  if (!out.dir.empty()) {
    fs::create_directories(out.dir);
    metrics = std::make_unique<std::ofstream>(out.dir / "metrics.jsonl", std::ios::trunc);
  }
  auto log = [&](const std::string& s) {
    if (out.log) out.log(s);
  };
  auto save = [&](const fs::path& name, nlohmann::json extra_manifest) {
    if (out.dir.empty()) return;
    nlohmann::json manifest = out.manifest;
    for (auto& [k, v] : extra_manifest.items()) manifest[k] = v;
    write_checkpoint(out.dir / name, snapshot(model.params(), &opt, manifest));
  };

  TrainResult result;
  result.total_steps = total_steps;
  auto validate_now = [&](int step) {
    double mrr = 0.0;
    if (!valid.empty()) {
      EvalOptions eo;
      eo.protocol = Protocol::filtered;
      eo.jobs = cfg.jobs;
      eo.precision = cfg.precision;
      eo.limit = cfg.valid_limit;
      mrr = rank_queries(model, ctx, valid, known, eo).pooled.mrr;
    }
    result.validation.emplace_back(step, mrr);
    write_json_line(metrics.get(), {{"step", step}, {"valid_mrr", mrr}});
    log(fmt::format("step {:>6}  valid MRR {:.4f}", step, mrr));
    if (mrr > result.best_valid_mrr) {
      result.best_valid_mrr = mrr;
      result.best_step = step;
      save("best.ckpt", {{"step", step}, {"valid_mrr", mrr}});
    }
  };

  if (total_steps == 0) {
    result.best_valid_mrr = 0.0;
    save("best.ckpt", {{"step", 0}, {"valid_mrr", nullptr}});
  }

  const int valid_every = cfg.valid_every > 0 ? cfg.valid_every : steps_per_epoch;
  std::vector<TypedEdge> edges;
  edges.reserve(train_graph.edges().size());
  for (int step = 1; step <= total_steps; ++step) {
    model.params().zero_grad();
    LossBreakdown mean_loss;
    mean_loss.lambda = cfg.lambda;
    std::vector<int> batch_queries;
    for (int b = 0; b < cfg.batch; ++b) {
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const int k = order[cursor++];
      batch_queries.push_back(k);
      const Triplet& t = triplets[static_cast<std::size_t>(k)];
      const int twin = k < half ? k + half : k - half;
      edges.clear();
      for (int e = 0; e < n_dir; ++e) {
        if (e != k && e != twin) edges.push_back(train_graph.edges()[static_cast<std::size_t>(e)]);
      }
      const QueryTriplet q{t.head, t.rel, t.tail};
      std::vector<int> cands{t.tail};
      const std::vector<int> neg = sample_negatives(q, train_graph.entity_count(), cfg.negatives, rng);
      cands.insert(cands.end(), neg.begin(), neg.end());

      Tape tape(cfg.precision);
      QueryResult r = model.forward(tape, ctx, q, edges);
      LossResult loss = compute_loss(gather_candidates(r.struct_logits, cands), gather_candidates(r.krlm_logits, cands),
                                     cfg.lambda, cfg.sign);
      if (!std::isfinite(loss.parts.total)) {
        save("nan_abort.ckpt", {{"step", step}, {"query_index", k}, {"batch_queries", batch_queries}});
        throw NumericError(fmt::format("non-finite loss at step {} (query triplet index {})", step, k));
      }
      tape.backward(ops::scale(loss.total, 1.0 / cfg.batch));
      const double w = 1.0 / cfg.batch;
      mean_loss.total += w * loss.parts.total;
      mean_loss.bce_krlm += w * loss.parts.bce_krlm;
      mean_loss.bce_struct += w * loss.parts.bce_struct;
      mean_loss.kl_struct_to_krlm += w * loss.parts.kl_struct_to_krlm;
      mean_loss.kl_krlm_to_struct += w * loss.parts.kl_krlm_to_struct;
    }
    const double lr = opt.learning_rate(opt.updates());
    opt.step(collect_gradients(model.params()));
    result.steps.push_back(StepLog{step, mean_loss, lr});
    write_json_line(metrics.get(), {{"step", step}, {"loss", mean_loss.to_json()}, {"lr", lr}});
    if (step % 10 == 0 || step == 1) log(fmt::format("step {:>6}/{}  loss {:.5f}  lr {:.2e}", step, total_steps, mean_loss.total, lr));
    if (step % valid_every == 0 || step == total_steps) validate_now(step);
  }
  save("last.ckpt", {{"step", total_steps}});
  return result;
}

}  // namespace krlm
