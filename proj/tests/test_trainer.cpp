// SPDX-License-Identifier: Apache-2.0

#include "krlm/trainer.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace krlm;
namespace fs = std::filesystem;

namespace {

CandidateLogits constant_candidates(Tape& tape, const std::vector<double>& v) {
  Matrix m(static_cast<Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Index>(i), 0) = v[i];
  std::vector<int> ids(v.size());
  std::iota(ids.begin(), ids.end(), 0);
  return CandidateLogits{ids, tape.constant(m)};
}

std::vector<double> random_logits(std::mt19937_64& rng, int n, double scale = 2.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = d(rng);
  return v;
}

double bce_softplus(const std::vector<double>& x, double sign) {
  double neg = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) neg += oracle::softplus(x[i]);
  return oracle::softplus(-x[0]) + sign * neg / static_cast<double>(x.size() - 1);
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("krlm_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_SUITE("negatives") {
  TEST_CASE("with two entities the only negative is the other one") {
    std::mt19937_64 rng(1);
    for (int a = 0; a < 2; ++a) {
      bool repl = false;
      const auto neg = sample_negatives(QueryTriplet{0, 0, a}, 2, 3, rng, &repl);
      CHECK(repl);
      for (int e : neg) CHECK(e == 1 - a);
    }
    CHECK_THROWS_AS(sample_negatives(QueryTriplet{0, 0, 0}, 1, 1, rng), ContractError);
  }

  TEST_CASE("draws are distinct, exclude the answer and repeat under a seed") {
    std::mt19937_64 a(5), b(5);
    bool repl = true;
    const auto x = sample_negatives(QueryTriplet{3, 1, 17}, 400, 256, a, &repl);
    const auto y = sample_negatives(QueryTriplet{3, 1, 17}, 400, 256, b);
    CHECK(!repl);
    CHECK(x == y);
    CHECK(std::set<int>(x.begin(), x.end()).size() == 256);
    CHECK(std::find(x.begin(), x.end(), 17) == x.end());
  }

  TEST_CASE("inclusion counts are uniform over the eligible entities") {
    // 10k draws of 256 from the 1593 entities eligible out of 1594. Each
    // eligible entity is included with p = 256/1593. The chi-square statistic
    // over entities has mean about I' and sd about sqrt(2 I'); a per-entity
    // 3 sigma bound is expected to be exceeded by roughly 0.3% of entities.
    const int entities = 1594, n = 256, draws = 10000, answer = 700;
    std::mt19937_64 rng(2024);
    std::vector<int> count(static_cast<std::size_t>(entities), 0);
    for (int d = 0; d < draws; ++d) {
      for (int e : sample_negatives(QueryTriplet{0, 0, answer}, entities, n, rng)) ++count[static_cast<std::size_t>(e)];
    }
    CHECK(count[answer] == 0);
    const int eligible = entities - 1;
    const double p = static_cast<double>(n) / eligible;
    const double mean = draws * p;
    const double var = draws * p * (1.0 - p);
    double chi2 = 0.0;
    int beyond = 0;
    for (int e = 0; e < entities; ++e) {
      if (e == answer) continue;
      const double z = (count[static_cast<std::size_t>(e)] - mean) / std::sqrt(var);
      chi2 += z * z;
      if (std::abs(z) > 3.0) ++beyond;
    }
    CHECK(std::abs(chi2 - eligible) < 3.0 * std::sqrt(2.0 * eligible));
    CHECK(beyond <= eligible / 100);
  }
}

TEST_SUITE("loss") {
  TEST_CASE("lambda endpoints reduce to the BCE sum and the KL sum") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const auto s = random_logits(rng, 1 + 1 + trial);
      const auto k = random_logits(rng, 1 + 1 + trial);
      Tape tape;
      const auto cs = constant_candidates(tape, s);
      const auto ck = constant_candidates(tape, k);
      const double bce_sum = bce_softplus(s, 1.0) + bce_softplus(k, 1.0);
      const double kl_sum = oracle::kl(s, k) + oracle::kl(k, s);
      CHECK(std::abs(compute_loss(cs, ck, 0.0).parts.total - bce_sum) < 1e-12);
      CHECK(std::abs(compute_loss(cs, ck, 1.0).parts.total - kl_sum) < 1e-12);
      const LossBreakdown mid = compute_loss(cs, ck, 0.3).parts;
      CHECK(std::abs(mid.total - (0.7 * bce_sum + 0.3 * kl_sum)) < 1e-12);
      CHECK(std::abs(mid.bce_struct - oracle::bce_from_probs(s)) < 1e-12);
      CHECK(std::abs(mid.bce_krlm - oracle::bce_from_probs(k)) < 1e-12);
      CHECK(std::abs(mid.kl_struct_to_krlm - oracle::kl(s, k)) < 1e-12);
      CHECK(std::abs(mid.kl_krlm_to_struct - oracle::kl(k, s)) < 1e-12);
    }
  }

  TEST_CASE("identical logits have zero divergence") {
    std::mt19937_64 rng(4);
    const auto s = random_logits(rng, 257);
    Tape tape;
    const LossBreakdown b = compute_loss(constant_candidates(tape, s), constant_candidates(tape, s), 1.0).parts;
    CHECK(std::abs(b.kl_struct_to_krlm) < 1e-12);
    CHECK(std::abs(b.kl_krlm_to_struct) < 1e-12);
    CHECK(std::abs(b.total) < 1e-12);
  }

  TEST_CASE("the objective is symmetric in its two scorers") {
    std::mt19937_64 rng(6);
    const auto s = random_logits(rng, 9), k = random_logits(rng, 9);
    Tape tape;
    const double a = compute_loss(constant_candidates(tape, s), constant_candidates(tape, k), 0.5).parts.total;
    const double b = compute_loss(constant_candidates(tape, k), constant_candidates(tape, s), 0.5).parts.total;
    CHECK(std::abs(a - b) < 1e-12);
  }

  TEST_CASE("the as-printed sign subtracts the negative term") {
    std::mt19937_64 rng(8);
    const auto s = random_logits(rng, 6), k = random_logits(rng, 6);
    Tape tape;
    const LossBreakdown b =
        compute_loss(constant_candidates(tape, s), constant_candidates(tape, k), 0.0, BceSign::as_printed).parts;
    CHECK(std::abs(b.bce_struct - bce_softplus(s, -1.0)) < 1e-12);
    CHECK(std::abs(b.total - bce_softplus(s, -1.0) - bce_softplus(k, -1.0)) < 1e-12);
  }

  TEST_CASE("contract violations are rejected") {
    Tape tape;
    const auto a = constant_candidates(tape, {1.0, 2.0, 3.0});
    auto b = constant_candidates(tape, {1.0, 2.0, 3.0});
    b.candidates[2] = 7;
    CHECK_THROWS_AS(compute_loss(a, b, 0.5), ContractError);
    CHECK_THROWS_AS(compute_loss(a, a, 1.5), ContractError);
    const auto one = constant_candidates(tape, {1.0});
    CHECK_THROWS_AS(compute_loss(one, one, 0.5), ContractError);
  }

  TEST_CASE("gradients reach both scorers and none reach the backbone") {
    fixture::Tiny f;
    KrlmModel& model = *f.model;
    model.params().zero_grad();
    const Triplet& t = f.kg.triplets()[2];
    const QueryTriplet q{t.head, t.rel, t.tail};
    std::mt19937_64 rng(1);
    std::vector<int> cands{t.tail};
    for (int e : sample_negatives(q, f.kg.entity_count(), 6, rng)) cands.push_back(e);
    Tape tape;
    const QueryResult r = model.forward(tape, *f.ctx, q);
    const LossResult loss =
        compute_loss(gather_candidates(r.struct_logits, cands), gather_candidates(r.krlm_logits, cands), 0.5);
    tape.backward(loss.total);
    for (const char* name : {"encoder.score.w1", "predictor.score.w1", "encoder.gnn_r.patterns",
                             "instruction.f_struct", "attention.layer0.m_q", "predictor.g.weight"}) {
      CAPTURE(name);
      CHECK(model.params().get(name).grad.cwiseAbs().sum() > 0.0);
    }
    for (const Parameter* p : std::as_const(model.params()).all()) {
      if (!p->trainable && p->grad.size() > 0) CHECK(p->grad.cwiseAbs().sum() == 0.0);
    }
  }
}

TEST_SUITE("training") {
  TEST_CASE("zero steps save the initial parameters") {
    fixture::Tiny f;
    const std::uint64_t before = f.model->params().checksum(true);
    TrainConfig cfg;
    cfg.epochs = 0;
    const fs::path dir = scratch_dir("zero_steps");
    const TrainResult r = train(*f.model, *f.ctx, {}, cfg, TrainOutputs{dir, {}, {}});
    CHECK(r.total_steps == 0);
    CHECK(r.steps.empty());
    CHECK(f.model->params().checksum(true) == before);
    for (const char* name : {"best.ckpt", "last.ckpt"}) {
      fixture::Tiny g;
      restore(g.model->params(), read_checkpoint(dir / name));
      CHECK(g.model->params().checksum(true) == before);
    }
  }

  TEST_CASE("a diverging run stops with a numeric error and a checkpoint") {
    fixture::Tiny f;
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.steps_per_epoch = 60;
    cfg.batch = 1;
    cfg.negatives = 4;
    cfg.optimizer.learning_rate = 1e300;
    cfg.optimizer.accumulation = 1;
    cfg.optimizer.warmup_fraction = 0.0;
    const fs::path dir = scratch_dir("nan_abort");
    CHECK_THROWS_AS(train(*f.model, *f.ctx, {}, cfg, TrainOutputs{dir, {}, {}}), NumericError);
    CHECK(fs::exists(dir / "nan_abort.ckpt"));
    const Checkpoint c = read_checkpoint(dir / "nan_abort.ckpt");
    CHECK(c.manifest.contains("query_index"));
  }

  TEST_CASE("frozen backbone weights never change during training") {
    fixture::Tiny f;
    const std::uint64_t frozen = f.model->params().checksum(false);
    const std::uint64_t trainable = f.model->params().checksum(true);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.steps_per_epoch = 4;
    cfg.batch = 2;
    cfg.negatives = 5;
    cfg.optimizer.accumulation = 1;
    train(*f.model, *f.ctx, {}, cfg);
    CHECK(f.model->params().checksum(false) == frozen);
    CHECK(f.model->params().checksum(true) != trainable);
  }

  TEST_CASE("finetune epochs follow the dataset table") {
    CHECK(finetune_epochs("fb_v1") == 3);
    CHECK(finetune_epochs("FB-v3") == 5);
    CHECK(finetune_epochs("wn_v2") == 5);
    CHECK(finetune_epochs("FB25") == 10);
    CHECK(finetune_epochs("NL-100") == 3);
    CHECK(finetune_epochs("unknown") == 3);
  }

  TEST_CASE("200 steps on the toy graph lower the windowed loss") {
    const RawDataset raw = synthesize(SynthProfile::toy(), 1);
    const fs::path data = scratch_dir("toy_train");
    write_dataset(data, raw);
    const Dataset ds = load_dataset(data);
    ModelConfig mcfg;
    mcfg.memory_k = 10;
    std::vector<std::string> corpus;
    for (const auto& e : ds.train_graph.entities()) {
      corpus.push_back(e.name);
      corpus.push_back(e.description);
    }
    for (const auto& r : ds.train_graph.relations()) {
      corpus.push_back(r.name);
      corpus.push_back(r.description);
    }
    KrlmModel model(mcfg, Tokenizer::build(corpus, static_cast<std::size_t>(mcfg.backbone.vocab_size)));
    const GraphContext ctx = GraphContext::build(ds.train_graph, model.tokenizer(), mcfg.instruction);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.steps_per_epoch = 200;
    const TrainResult r = train(model, ctx, {}, cfg);
    REQUIRE(r.steps.size() == 200);
    std::vector<double> window(5, 0.0);
    for (int i = 0; i < 100; ++i) window[static_cast<std::size_t>(i / 20)] += r.steps[static_cast<std::size_t>(i)].loss.total / 20.0;
    for (std::size_t w = 1; w < window.size(); ++w) {
      CAPTURE(w);
      CAPTURE(window[w - 1]);
      CAPTURE(window[w]);
      CHECK(window[w] < window[w - 1]);
    }
  }
}
