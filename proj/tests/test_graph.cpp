// SPDX-License-Identifier: Apache-2.0

#include "krlm/dataset.hpp"
#include "krlm/gradcheck.hpp"
#include "krlm/kg.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace krlm;
namespace fs = std::filesystem;

namespace {

std::set<std::tuple<int, int, int>> as_set(const RelationalGraph& rg) {
  std::set<std::tuple<int, int, int>> s;
  for (const TypedEdge& e : rg.edges) s.emplace(e.src, e.type, e.dst);
  return s;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("krlm_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

}  // namespace

TEST_SUITE("graph") {
  TEST_CASE("relational graph equals the pairwise enumeration on random graphs") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 50; ++trial) {
      std::uniform_int_distribution<int> ents(3, 30), rels(1, 6), trips(10, 100);
      const int n = ents(rng);
      const KnowledgeGraph kg = random_graph(n, rels(rng), std::max(trips(rng), (n + 1) / 2), rng);
      const RelationalGraph rg = build_relational_graph(kg);
      CHECK(rg.node_count == kg.relation_count());
      CHECK(as_set(rg) == oracle::relational_edges(kg));
      CHECK(as_set(rg).size() == rg.edges.size());
    }
  }

  TEST_CASE("inverse augmentation mirrors every triplet at index k + N") {
    std::mt19937_64 rng(4);
    const KnowledgeGraph kg = random_graph(8, 3, 15, rng);
    REQUIRE(kg.augmented());
    const int j = kg.base_relation_count();
    const std::size_t n = kg.triplets().size() / 2;
    for (std::size_t k = 0; k < n; ++k) {
      const Triplet& t = kg.triplets()[k];
      const Triplet& inv = kg.triplets()[k + n];
      CHECK(inv.head == t.tail);
      CHECK(inv.tail == t.head);
      CHECK(inv.rel == t.rel + j);
      CHECK(kg.inverse_of(t.rel) == inv.rel);
    }
    for (int r = 0; r < j; ++r) {
      CHECK(kg.relations()[static_cast<std::size_t>(r + j)].is_inverse);
      CHECK(kg.relations()[static_cast<std::size_t>(r + j)].base_id == r);
    }
  }

  TEST_CASE("triplets naming unknown entities are data errors") {
    const fs::path dir = scratch_dir("bad_ids");
    write(dir / "entities.tsv", "a\tAlpha\tfirst\nb\tBeta\tsecond\n");
    write(dir / "relations.tsv", "r\tlikes\tlikes\n");
    write(dir / "train.tsv", "a\tr\tb\na\tr\tzeta\n");
    CHECK_THROWS_AS(load_dataset(dir), DataError);
    CHECK_THROWS_AS(load_dataset(dir / "missing"), DataError);
  }

  TEST_CASE("written datasets load back with identical content") {
    const RawDataset raw = synthesize(SynthProfile::toy(), 5);
    const fs::path dir = scratch_dir("roundtrip");
    write_dataset(dir, raw);
    const Dataset ds = load_dataset(dir);
    CHECK(ds.name == raw.name);
    CHECK(ds.inductive);
    CHECK(ds.train_graph.entity_count() == static_cast<int>(raw.train.entities.size()));
    CHECK(ds.test_graph.entity_count() == static_cast<int>(raw.test.entities.size()));
    CHECK(ds.train_graph.triplets().size() == 2 * raw.train.graph.size());
    CHECK(ds.valid == raw.train.queries);
    CHECK(ds.test == raw.test.queries);
    for (std::size_t i = 0; i < raw.train.entities.size(); ++i) {
      CHECK(ds.train_graph.entities()[i].name == raw.train.entities[i].name);
      CHECK(ds.train_graph.entities()[i].description == raw.train.entities[i].description);
    }
  }

  TEST_CASE("generated splits have the prescribed sizes") {
    for (const SynthProfile& p : {SynthProfile::toy(), SynthProfile::fb_v1()}) {
      const RawDataset raw = synthesize(p, 1);
      CHECK(static_cast<int>(raw.relations.size()) == p.relations);
      CHECK(static_cast<int>(raw.train.entities.size()) == p.train_entities);
      CHECK(static_cast<int>(raw.train.graph.size()) == p.train_graph);
      CHECK(static_cast<int>(raw.train.queries.size()) == p.valid);
      CHECK(static_cast<int>(raw.test.entities.size()) == p.test_entities);
      CHECK(static_cast<int>(raw.test.graph.size()) == p.test_graph);
      CHECK(static_cast<int>(raw.test.queries.size()) == p.test);
      // Queries are held out of the observed graph.
      const std::set<Triplet> graph(raw.test.graph.begin(), raw.test.graph.end());
      for (const Triplet& t : raw.test.queries) CHECK(graph.count(t) == 0);
    }
  }

  TEST_CASE("generation is deterministic under a seed") {
    const RawDataset a = synthesize(SynthProfile::toy(), 9);
    const RawDataset b = synthesize(SynthProfile::toy(), 9);
    CHECK(a.train.graph == b.train.graph);
    CHECK(a.test.queries == b.test.queries);
  }

  TEST_CASE("GraIL layout import maps identifiers to dense ids") {
    const fs::path src = scratch_dir("grail_src");
    fs::create_directories(src / "tr");
    fs::create_directories(src / "te");
    write(src / "tr" / "train.txt", "a\tr1\tb\nb\tr2\tc\nc\tr1\ta\n");
    write(src / "tr" / "valid.txt", "a\tr2\tc\n");
    write(src / "te" / "train.txt", "x\tr1\ty\ny\tr2\tz\n");
    write(src / "te" / "test.txt", "x\tr2\tz\n");
    const RawDataset raw = import_grail(src / "tr", src / "te", "tiny");
    CHECK(raw.relations.size() == 2);
    CHECK(raw.train.entities.size() == 3);
    CHECK(raw.test.entities.size() == 3);
    CHECK(raw.train.graph.size() == 3);
    CHECK(raw.test.queries.size() == 1);
  }
}
