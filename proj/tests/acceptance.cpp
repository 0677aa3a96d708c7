// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion. Uses the FB-V1 split from
// KRLM_FBV1_DIR when set, otherwise the generated surrogate with the same
// split sizes.

#include "krlm/commands.hpp"
#include "krlm/gradcheck.hpp"
#include "krlm/trainer.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#ifndef KRLM_CLI_PATH
#error "KRLM_CLI_PATH must name the krlm executable"
#endif

using namespace krlm;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::cout << fmt::format("[{}] criterion {}: {} | {}", ok ? "PASS" : "FAIL", id, name, detail) << std::endl;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int run(const std::string& cmd, const fs::path& log) {
  const std::string full = cmd + " >>" + log.string() + " 2>&1";
  return std::system(full.c_str());
}

// Criterion 1 -----------------------------------------------------------------

void gradient_suite() {
  const auto t0 = Clock::now();
  const std::vector<GradcheckCase> cases = run_gradcheck_suite(7);
  const double secs = seconds_since(t0);
  bool ok = secs < 120.0;
  std::string detail;
  for (const GradcheckCase& c : cases) {
    ok = ok && c.stats.max_rel_error < 1e-4;
    detail += fmt::format("{} {:.2e}; ", c.name, c.stats.max_rel_error);
  }
  report(1, "gradient suite", ok, detail + fmt::format("tol 1e-4, {:.1f}s (limit 120s)", secs));
}

// Criterion 2 -----------------------------------------------------------------

void attention_equivalences() {
  const auto t0 = Clock::now();
  ParameterStore store;
  std::mt19937_64 rng(91);
  BackboneConfig bc;
  bc.layers = 2;
  bc.hidden = 16;
  bc.vocab_size = 300;
  const Backbone backbone = Backbone::init(bc, 300, store);
  const MemoryWeights weights = MemoryWeights::create(2, 16, 6, store, rng);
  auto memory = [&](Tape& tape, int k) {
    const Matrix e = oracle::random_matrix(k + 2, 6, rng);
    std::vector<double> s(static_cast<std::size_t>(k + 2));
    for (double& v : s) v = std::uniform_real_distribution<double>(0, 1)(rng);
    return select_memory(s, tape.constant(e), k);
  };

  bool identical = true;
  for (int trial = 0; trial < 100; ++trial) {
    Tape tape;
    const Var h = tape.constant(oracle::random_matrix(2 + trial % 11, 16, rng));
    const Memory empty = memory(tape, 0);
    for (int n = 0; n < 2; ++n) {
      const Backbone::Layer& l = backbone.layer(n);
      const Matrix got = attention_layer(h, empty, n, backbone, weights).value();
      const Matrix want =
          backbone.feed_forward(ops::add(h, plain_attention_mix(ops::rms_norm(h, l.norm_attn->value), l)), n).value();
      identical = identical && (got.array() == want.array()).all();
    }
  }

  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Tape tape;
    const Memory mem = memory(tape, 1 + trial % 10);
    const Var hn = tape.constant(oracle::random_matrix(2 + trial % 9, 16, rng));
    const int n = trial % 2;
    const Backbone::Layer& l = backbone.layer(n);
    Parameter& mq = *weights.m_q[static_cast<std::size_t>(n)];
    Parameter& mv = *weights.m_v[static_cast<std::size_t>(n)];
    const Matrix mix = attention_mix(hn, mem, l, mq, mv).value();
    const Eigen::RowVectorXd closed = last_token_closed_form(hn.value(), mem.embeddings.value(), l.wq->value,
                                                             l.wk->value, l.wv->value, mq.value, mv.value);
    worst = std::max(worst, (mix.row(mix.rows() - 1) - closed).cwiseAbs().maxCoeff());
  }
  const double secs = seconds_since(t0);
  report(2, "attention equivalences", identical && worst < 1e-10 && secs < 30.0,
         fmt::format("K=0 bit-identical on 100x2 layers: {}; closed form max |diff| {:.2e} (tol 1e-10); {:.2f}s "
                     "(limit 30s)",
                     identical ? "yes" : "no", worst, secs));
}

// Criterion 3 -----------------------------------------------------------------

void structural_oracles() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(93);
  int graphs_equal = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<int> ents(3, 60), rels(1, 8), trips(10, 100);
    const int n = ents(rng);
    const KnowledgeGraph kg = random_graph(n, rels(rng), std::max(trips(rng), (n + 1) / 2), rng);
    const RelationalGraph rg = build_relational_graph(kg);
    std::set<std::tuple<int, int, int>> got;
    for (const TypedEdge& e : rg.edges) got.emplace(e.src, e.type, e.dst);
    if (kg.triplets().size() <= 200 && got == oracle::relational_edges(kg) && got.size() == rg.edges.size()) {
      ++graphs_equal;
    }
  }

  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    fixture::Tiny f(2 + trial % 9, 1 + trial % 4, 4 + trial % 9, 3, 500 + static_cast<std::uint64_t>(trial));
    const ParameterStore& store = f.model->params();
    const Triplet& t = f.kg.triplets()[static_cast<std::size_t>(trial) % f.kg.triplets().size()];
    const QueryTriplet q{t.head, t.rel, t.tail};
    Tape tape;
    const QueryResult r = f.model->forward(tape, *f.ctx, q);
    const int layers = f.model->config().encoder.layers;
    const int d = f.model->config().encoder.hidden;
    const Matrix rel = oracle::relation_gnn(store, "encoder.gnn_r", f.ctx->relational, q.rel, layers, d);
    Matrix init = Matrix::Zero(f.kg.entity_count(), d);
    init.row(q.head) = rel.row(q.rel);
    const Matrix ent = oracle::entity_gnn(store, "encoder.gnn_e", init, rel, f.kg.edges(), layers);
    const Matrix ph = oracle::paa(f.model->backbone().head(), f.ctx->text.entity_word(q.head),
                                  store.get("predictor.paa_head.w_down").value,
                                  store.get("predictor.paa_head.w_fusion").value);
    Matrix pinit = Matrix::Zero(f.kg.entity_count(), d);
    pinit.row(q.head) = ph;
    const Matrix dec = oracle::entity_gnn(store, "predictor.gnn_p", pinit, rel, f.kg.edges(), layers);
    worst = std::max({worst, (r.state.R.value() - rel).cwiseAbs().maxCoeff(),
                      (r.state.E.value() - ent).cwiseAbs().maxCoeff(), (r.decoded.value() - dec).cwiseAbs().maxCoeff()});
  }
  const double secs = seconds_since(t0);
  report(3, "structural oracles", graphs_equal == 50 && worst < 1e-10 && secs < 60.0,
         fmt::format("relational graphs equal {}/50; GNN max |diff| {:.2e} over 20 graphs of <=10 entities (tol "
                     "1e-10); {:.2f}s (limit 60s)",
                     graphs_equal, worst, secs));
}

// Criterion 8 -----------------------------------------------------------------

void loss_endpoints() {
  std::mt19937_64 rng(98);
  std::normal_distribution<double> nd(0.0, 2.0);
  double worst_bce = 0.0, worst_kl = 0.0, worst_zero = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial * 3;
    std::vector<double> s(static_cast<std::size_t>(n)), k(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = nd(rng);
      k[i] = nd(rng);
    }
    Tape tape;
    auto cands = [&](const std::vector<double>& v) {
      Matrix m(static_cast<Index>(v.size()), 1);
      for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Index>(i), 0) = v[i];
      std::vector<int> ids(v.size());
      std::iota(ids.begin(), ids.end(), 0);
      return CandidateLogits{ids, tape.constant(m)};
    };
    const double bce = oracle::bce_from_probs(s) + oracle::bce_from_probs(k);
    const double kl = oracle::kl(s, k) + oracle::kl(k, s);
    worst_bce = std::max(worst_bce, std::abs(compute_loss(cands(s), cands(k), 0.0).parts.total - bce));
    worst_kl = std::max(worst_kl, std::abs(compute_loss(cands(s), cands(k), 1.0).parts.total - kl));
    const LossBreakdown same = compute_loss(cands(s), cands(s), 0.5).parts;
    worst_zero = std::max({worst_zero, std::abs(same.kl_struct_to_krlm), std::abs(same.kl_krlm_to_struct)});
  }
  report(8, "loss endpoints", worst_bce < 1e-12 && worst_kl < 1e-12 && worst_zero < 1e-12,
         fmt::format("lambda=0 vs BCE sum {:.2e}; lambda=1 vs KL sum {:.2e}; KL at identical logits {:.2e} (tol "
                     "1e-12, 100 instances)",
                     worst_bce, worst_kl, worst_zero));
}

// Criteria 4 to 7 -------------------------------------------------------------

struct Dumped {
  int triplet = 0;
  bool inverse = false;
  int head = 0, rel = 0, answer = 0;
  std::vector<double> fused, structural, krlm;
};

std::vector<Dumped> parse_dump(const std::string& text) {
  std::vector<Dumped> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    Dumped d;
    d.triplet = j["triplet"];
    d.inverse = j["inverse"];
    d.head = j["head"];
    d.rel = j["relation"];
    d.answer = j["answer"];
    d.fused = j["fused"].get<std::vector<double>>();
    d.structural = j["struct"].get<std::vector<double>>();
    d.krlm = j["krlm"].get<std::vector<double>>();
    out.push_back(std::move(d));
  }
  return out;
}

void trained_model(const fs::path& root, const fs::path& data) {
  RunConfig cfg;
  set_config_value(cfg, "data", data.string());
  set_config_value(cfg, "work", (root / "work").string());
  set_config_value(cfg, "out", (root / "train").string());
  set_config_value(cfg, "backbone-layers", "2");
  set_config_value(cfg, "backbone-dim", "128");
  set_config_value(cfg, "gnn-layers", "6");
  set_config_value(cfg, "gnn-dim", "64");
  set_config_value(cfg, "memory-k", "10");
  set_config_value(cfg, "lambda", "0.5");
  set_config_value(cfg, "negatives", "256");
  set_config_value(cfg, "epochs", "1");
  set_config_value(cfg, "steps-per-epoch", "500");
  set_config_value(cfg, "valid-limit", "50");
  set_config_value(cfg, "seed", "1");
  cfg.finalize();
  std::ofstream log(root / "train.log");
  run_prepare(cfg, log);

  const auto t_train = Clock::now();
  run_train(cfg, TrainMode::e2e, log);
  const double train_secs = seconds_since(t_train);

  std::vector<double> losses;
  {
    std::ifstream is(root / "train" / "metrics.jsonl");
    std::string line;
    while (std::getline(is, line)) {
      const auto j = nlohmann::json::parse(line);
      if (j.contains("loss")) losses.push_back(j["loss"]["total"]);
    }
  }
  std::vector<double> window(5, 0.0);
  bool enough = losses.size() >= 500;
  for (std::size_t i = 0; enough && i < 100; ++i) window[i / 20] += losses[i] / 20.0;
  bool decreasing = enough;
  for (std::size_t w = 1; w < 5; ++w) decreasing = decreasing && window[w] < window[w - 1];

  const std::unique_ptr<Prepared> prep = load_prepared(root / "work", cfg.model.instruction);
  const std::unique_ptr<KrlmModel> model = load_model(root / "train" / "last.ckpt", prep->tokenizer);
  const Dataset& ds = prep->dataset;
  const KnowledgeGraph& tg = ds.test_graph;
  const std::vector<std::vector<Triplet>> extra = {ds.test};
  const KnownAnswers known(tg, extra);

  std::ostringstream scores, predictions;
  EvalOptions eo;
  eo.protocol = Protocol::filtered;
  eo.score_dump = &scores;
  eo.prediction_dump = &predictions;
  const auto t_eval = Clock::now();
  const EvalReport rep = rank_queries(*model, prep->test_ctx, ds.test, known, eo);
  const double eval_secs = seconds_since(t_eval);

  // Criterion 4: re-rank the dumped scores with a full sort and an
  // independently built filter set.
  const std::vector<Dumped> dumped = parse_dump(scores.str());
  const int j = tg.base_relation_count();
  std::map<std::pair<int, int>, std::set<int>> truth;
  auto add_truth = [&](const Triplet& t) {
    truth[{t.head, t.rel}].insert(t.tail);
    truth[{t.tail, t.rel + j}].insert(t.head);
  };
  for (const Triplet& t : tg.triplets()) {
    if (t.rel < j) add_truth(t);
  }
  for (const Triplet& t : ds.test) add_truth(t);
  int raw_equal = 0, filt_equal = 0, dir_ok = 0;
  std::vector<int> oracle_raw, oracle_filt;
  for (std::size_t i = 0; i < dumped.size() && i < rep.outcomes.size(); ++i) {
    const Dumped& d = dumped[i];
    const Triplet& t = ds.test[static_cast<std::size_t>(d.triplet)];
    const bool direction = d.triplet == static_cast<int>(i / 2) && d.inverse == (i % 2 == 1) &&
                           (d.inverse ? (d.head == t.tail && d.rel == t.rel + j && d.answer == t.head)
                                      : (d.head == t.head && d.rel == t.rel && d.answer == t.tail));
    dir_ok += direction ? 1 : 0;
    std::vector<char> mask(d.fused.size(), 0);
    for (int e : truth[{d.head, d.rel}]) mask[static_cast<std::size_t>(e)] = 1;
    const int rr = oracle::sort_rank(d.fused, d.answer, nullptr);
    const int rf = oracle::sort_rank(d.fused, d.answer, &mask);
    oracle_raw.push_back(rr);
    oracle_filt.push_back(rf);
    raw_equal += rep.outcomes[i].rank_raw == rr ? 1 : 0;
    filt_equal += rep.outcomes[i].rank_filtered == rf ? 1 : 0;
  }
  const int expected = 2 * static_cast<int>(ds.test.size());
  auto mean_rr = [](const std::vector<int>& r) {
    double s = 0.0;
    for (int x : r) s += 1.0 / x;
    return s / static_cast<double>(r.size());
  };
  const bool metrics_equal = rep.pooled.mrr == mean_rr(oracle_filt) &&
                             metrics_from_ranks(oracle_raw).mrr == mean_rr(oracle_raw);
  report(4, "ranking-metric oracle",
         static_cast<int>(dumped.size()) == expected && raw_equal == expected && filt_equal == expected &&
             dir_ok == expected && metrics_equal && eval_secs < 300.0,
         fmt::format("{} test triplets, {} directed queries; raw ranks equal {}/{}, filtered ranks equal {}/{}, "
                     "direction layout {}/{}, pooled MRR equal: {}; rank_queries {:.1f}s (limit 300s)",
                     ds.test.size(), dumped.size(), raw_equal, expected, filt_equal, expected, dir_ok, expected,
                     metrics_equal ? "yes" : "no", eval_secs));

  // Criterion 5: every ranked list is a permutation of the test entities.
  const int entities = tg.entity_count();
  int permutations = 0;
  for (const Dumped& d : dumped) {
    const std::vector<int> order = fuse_and_rank(fuse_scores(d.structural, d.krlm));
    std::vector<char> seen(static_cast<std::size_t>(entities), 0);
    bool ok = static_cast<int>(order.size()) == entities;
    for (int e : order) {
      ok = ok && e >= 0 && e < entities && !seen[static_cast<std::size_t>(e)];
      if (e >= 0 && e < entities) seen[static_cast<std::size_t>(e)] = 1;
    }
    permutations += ok ? 1 : 0;
  }
  int top_ok = 0, top_lines = 0;
  {
    std::istringstream is(predictions.str());
    std::string line;
    while (std::getline(is, line)) {
      const auto rec = nlohmann::json::parse(line);
      std::set<int> ids;
      bool ok = rec["top10"].size() == 10;
      for (const auto& item : rec["top10"]) {
        const int e = item["entity"];
        ok = ok && e >= 0 && e < entities && ids.insert(e).second;
      }
      top_ok += ok ? 1 : 0;
      ++top_lines;
    }
  }
  report(5, "support constraint",
         entities == 1093 && permutations == expected && top_ok == expected && top_lines == expected,
         fmt::format("test entities {}; full rankings that are permutations {}/{}; top-10 lists in range and "
                     "distinct {}/{}",
                     entities, permutations, expected, top_ok, top_lines));

  // Criterion 6.
  const double target = 10.0 * oracle::random_mrr(1093);
  report(6, "optimization smoke",
         decreasing && rep.pooled.mrr >= 0.069 && train_secs < 3600.0,
         fmt::format("{} steps; window-20 means {:.4f} {:.4f} {:.4f} {:.4f} {:.4f}; test MRR {:.4f} (filtered, "
                     ">= 0.069; 10x random = {:.4f}); training {:.1f} min (target 60)",
                     losses.size(), window[0], window[1], window[2], window[3], window[4], rep.pooled.mrr, target,
                     train_secs / 60.0));

  // Criterion 7.
  const EasyHardReport& eh = rep.easy_hard;
  report(7, "easy/hard directionality", eh.easy.mrr > eh.hard.mrr && eh.easy.hit10 > eh.hard.hit10,
         fmt::format("K={}: easy n={} MRR {:.4f} Hit@10 {:.4f}; hard n={} MRR {:.4f} Hit@10 {:.4f}", eh.memory_k,
                     eh.easy.count, eh.easy.mrr, eh.easy.hit10, eh.hard.count, eh.hard.mrr, eh.hard.hit10));
}

// Criterion 9 -----------------------------------------------------------------

void determinism(const fs::path& root, const fs::path& data) {
  const std::string cli = KRLM_CLI_PATH;
  std::string metrics[2];
  bool ran = true;
  for (int i = 0; i < 2; ++i) {
    const fs::path dir = root / fmt::format("run{}", i);
    const fs::path log = root / fmt::format("run{}.log", i);
    const std::string common = fmt::format("--work {} --seed 11 --jobs 1 --memory-k 10", (dir / "work").string());
    ran = ran && run(fmt::format("{} prepare --data {} {}", cli, data.string(), common), log) == 0;
    ran = ran && run(fmt::format("{} train-e2e {} --out {} --epochs 1 --steps-per-epoch 50 --valid-limit 20", cli,
                                 common, (dir / "train").string()),
                     log) == 0;
    ran = ran && run(fmt::format("{} evaluate {} --checkpoint {} --out {} --limit 60", cli, common,
                                 (dir / "train" / "last.ckpt").string(), (dir / "eval").string()),
                     log) == 0;
    metrics[i] = slurp(dir / "eval" / "metrics.json");
  }
  report(9, "determinism", ran && !metrics[0].empty() && metrics[0] == metrics[1],
         fmt::format("two single-threaded prepare -> train-e2e(50 steps) -> evaluate runs; commands succeeded: {}; "
                     "metrics.json {} bytes, byte-identical: {}",
                     ran ? "yes" : "no", metrics[0].size(), metrics[0] == metrics[1] ? "yes" : "no"));
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  const fs::path root = fs::temp_directory_path() / "krlm_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);

  fs::path data;
  std::string source;
  if (const char* dir = std::getenv("KRLM_FBV1_DIR"); dir != nullptr && *dir != '\0') {
    data = dir;
    source = fmt::format("FB-V1 from {}", data.string());
  } else {
    data = root / "fb_v1";
    write_dataset(data, synthesize(SynthProfile::fb_v1(), 1));
    source = "generated FB-V1 surrogate (seed 1; set KRLM_FBV1_DIR for the real split)";
  }
  std::cout << "dataset: " << source << std::endl;

  try {
    loss_endpoints();
    gradient_suite();
    attention_equivalences();
    structural_oracles();
    trained_model(root, data);
    determinism(root, data);
  } catch (const std::exception& e) {
    std::cout << "[FAIL] acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << fmt::format("{} criteria failed; total {:.1f} min", failures, seconds_since(t0) / 60.0) << std::endl;
  return failures == 0 ? 0 : 1;
}
