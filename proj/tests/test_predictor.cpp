// SPDX-License-Identifier: Apache-2.0

#include "krlm/predictor.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <nlohmann/json.hpp>

using namespace krlm;

TEST_SUITE("predictor") {
  TEST_CASE("projection, decoder GNN and scorer equal a dense replay") {
    fixture::Tiny f;
    const ParameterStore& store = f.model->params();
    for (int k = 0; k < 4; ++k) {
      const Triplet& t = f.kg.triplets()[static_cast<std::size_t>(5 * k)];
      const QueryTriplet q{t.head, t.rel, t.tail};
      Tape tape;
      const QueryResult r = f.model->forward(tape, *f.ctx, q);
      const std::vector<int> word = f.ctx->text.entity_word(q.head);
      const Matrix ph = oracle::paa(f.model->backbone().head(), word, store.get("predictor.paa_head.w_down").value,
                                    store.get("predictor.paa_head.w_fusion").value);
      const Matrix rel = r.state.R.value();
      Matrix init = Matrix::Zero(f.kg.entity_count(), ph.cols());
      init.row(q.head) = ph;
      const Matrix decoded = oracle::entity_gnn(store, "predictor.gnn_p", init, rel, f.kg.edges(), 2);
      CHECK((r.decoded.value() - decoded).cwiseAbs().maxCoeff() < 1e-10);

      const Matrix g = oracle::add_row(r.h_last.value() * store.get("predictor.g.weight").value,
                                       store.get("predictor.g.bias").value);
      Matrix cat(f.kg.entity_count(), 3 * ph.cols());
      for (int i = 0; i < f.kg.entity_count(); ++i) cat.row(i) << decoded.row(i), rel.row(q.rel), g;
      const Matrix s = oracle::mlp(store, "predictor.score", cat);
      CHECK((r.krlm_logits.value() - s).cwiseAbs().maxCoeff() < 1e-10);

      const std::vector<double> probs = r.krlm_scores();
      for (int i = 0; i < f.kg.entity_count(); ++i) {
        CHECK(probs[static_cast<std::size_t>(i)] == doctest::Approx(1.0 / (1.0 + std::exp(-s(i, 0)))).epsilon(1e-14));
      }
    }
  }

  TEST_CASE("fused scores average the two probabilities") {
    const std::vector<double> a = {0.2, 0.9, 0.5};
    const std::vector<double> b = {0.6, 0.1, 0.5};
    const auto fused = fuse_scores(a, b);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(fused[i].fused == (a[i] + b[i]) / 2.0);
      CHECK(fused[i].structural == a[i]);
      CHECK(fused[i].krlm == b[i]);
    }
    CHECK_THROWS_AS(fuse_scores(a, std::vector<double>{0.1}), ContractError);
  }

  TEST_CASE("fused ranking is a permutation sorted with ascending-id ties") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 50; ++trial) {
      const int n = 1 + trial;
      std::vector<double> a(static_cast<std::size_t>(n)), b(a.size());
      std::uniform_int_distribution<int> v(0, 4);
      for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = v(rng) / 4.0;
        b[i] = v(rng) / 4.0;
      }
      const auto pairs = fuse_scores(a, b);
      const std::vector<int> order = fuse_and_rank(pairs);
      std::vector<int> sorted = order;
      std::sort(sorted.begin(), sorted.end());
      std::vector<int> ids(static_cast<std::size_t>(n));
      std::iota(ids.begin(), ids.end(), 0);
      CHECK(sorted == ids);
      std::vector<double> fused;
      for (const auto& p : pairs) fused.push_back(p.fused);
      for (int e = 0; e < n; ++e) {
        const int pos = static_cast<int>(std::find(order.begin(), order.end(), e) - order.begin());
        CHECK(pos + 1 == oracle::sort_rank(fused, e, nullptr));
      }
    }
  }

  TEST_CASE("prediction records list the top ten in ranked order") {
    std::vector<double> a(15), b(15);
    for (int i = 0; i < 15; ++i) {
      a[static_cast<std::size_t>(i)] = (i * 7 % 15) / 15.0;
      b[static_cast<std::size_t>(i)] = 0.5;
    }
    const auto pairs = fuse_scores(a, b);
    const nlohmann::json j = prediction_record(QueryTriplet{1, 2, 3}, pairs);
    CHECK(j["query"]["head"] == 1);
    CHECK(j["query"]["answer"] == 3);
    REQUIRE(j["top10"].size() == 10);
    const std::vector<int> order = fuse_and_rank(pairs);
    for (std::size_t i = 0; i < 10; ++i) CHECK(j["top10"][i]["entity"] == order[i]);
  }

  TEST_CASE("logistic is stable at both extremes") {
    CHECK(logistic(800.0) == 1.0);
    CHECK(logistic(-800.0) >= 0.0);
    CHECK(logistic(-800.0) < 1e-300);
    CHECK(logistic(0.0) == 0.5);
  }
}
