// SPDX-License-Identifier: Apache-2.0

#include "krlm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace krlm {

namespace {

void write_records(const fs::path& path, const std::vector<std::pair<std::string, std::pair<std::string, std::string>>>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  for (const auto& [key, nd] : rows) os << key << '\t' << nd.first << '\t' << nd.second << '\n';
}

void write_triplets(const fs::path& path, const std::vector<Triplet>& ts, const std::string& ent_prefix) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  for (const Triplet& t : ts) os << ent_prefix << t.head << "\tr" << t.rel << '\t' << ent_prefix << t.tail << '\n';
}

std::vector<std::pair<std::string, std::pair<std::string, std::string>>> entity_rows(
    const std::vector<EntityRecord>& es, const std::string& prefix) {
  std::vector<std::pair<std::string, std::pair<std::string, std::string>>> rows;
  for (const auto& e : es) rows.push_back({prefix + std::to_string(e.id), {e.name, e.description}});
  return rows;
}

}  // namespace

void write_dataset(const fs::path& dir, const RawDataset& ds) {
  fs::create_directories(dir);
  std::vector<std::pair<std::string, std::pair<std::string, std::string>>> rels;
  for (const auto& r : ds.relations) rels.push_back({"r" + std::to_string(r.id), {r.name, r.description}});
  write_records(dir / "relations.tsv", rels);
  write_records(dir / "entities.tsv", entity_rows(ds.train.entities, "e"));
  write_triplets(dir / "train.tsv", ds.train.graph, "e");
  write_triplets(dir / "valid.tsv", ds.train.queries, "e");
  if (ds.inductive) {
    fs::create_directories(dir / "test");
    write_records(dir / "test" / "entities.tsv", entity_rows(ds.test.entities, "t"));
    write_triplets(dir / "test" / "graph.tsv", ds.test.graph, "t");
    write_triplets(dir / "test" / "test.tsv", ds.test.queries, "t");
  } else {
    write_triplets(dir / "test.tsv", ds.test.queries, "e");
  }
  nlohmann::json meta{{"name", ds.name}, {"inductive", ds.inductive}};
  std::ofstream(dir / "dataset.json", std::ios::trunc) << meta.dump(2) << '\n';
}

std::string dataset_name(const fs::path& dir) {
  std::ifstream in(dir / "dataset.json");
  if (in) {
    try {
      const auto j = nlohmann::json::parse(in);
      if (j.contains("name")) return j.at("name").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(fmt::format("{}: {}", (dir / "dataset.json").string(), e.what()));
    }
  }
  return fs::absolute(dir).lexically_normal().filename().string();
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  Dataset ds;
  ds.name = dataset_name(dir);
  ds.source = fs::absolute(dir).lexically_normal().string();
  Vocabulary train_vocab = load_vocabulary(dir / "entities.tsv", dir / "relations.tsv");
  std::vector<Triplet> train = load_triplets(dir / "train.tsv", train_vocab);
  ds.valid = fs::exists(dir / "valid.tsv") ? load_triplets(dir / "valid.tsv", train_vocab) : std::vector<Triplet>{};
  ds.inductive = fs::is_directory(dir / "test");
  KnowledgeGraph base_train(train_vocab.entities, train_vocab.relations, std::move(train), false);
  ds.train_graph = augment_inverses(base_train);
  if (ds.inductive) {
    Vocabulary test_vocab = load_vocabulary(dir / "test" / "entities.tsv", dir / "relations.tsv");
    std::vector<Triplet> graph = load_triplets(dir / "test" / "graph.tsv", test_vocab);
    ds.test = load_triplets(dir / "test" / "test.tsv", test_vocab);
    ds.test_graph = augment_inverses(KnowledgeGraph(test_vocab.entities, test_vocab.relations, std::move(graph), false));
  } else {
    ds.test = fs::exists(dir / "test.tsv") ? load_triplets(dir / "test.tsv", train_vocab) : std::vector<Triplet>{};
    ds.test_graph = ds.train_graph;
  }
  return ds;
}

// GraIL import ------------------------------------------------------------------

namespace {

struct RawTriples {
  std::vector<std::array<std::string, 3>> rows;
};

RawTriples read_raw(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  RawTriples out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::array<std::string, 3> row;
    if (!(ss >> row[0] >> row[1] >> row[2])) {
      throw DataError(fmt::format("{}:{}: expected three fields", path.string(), lineno));
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

class Interner {
 public:
  int id(const std::string& key) {
    auto [it, fresh] = ids_.emplace(key, static_cast<int>(keys_.size()));
    if (fresh) keys_.push_back(key);
    return it->second;
  }
  const std::vector<std::string>& keys() const { return keys_; }

 private:
  std::map<std::string, int> ids_;
  std::vector<std::string> keys_;
};

std::vector<Triplet> intern(const RawTriples& raw, Interner& ents, Interner& rels) {
  std::vector<Triplet> out;
  std::set<Triplet> seen;
  for (const auto& r : raw.rows) {
    Triplet t{ents.id(r[0]), rels.id(r[1]), ents.id(r[2])};
    if (seen.insert(t).second) out.push_back(t);
  }
  return out;
}

std::vector<EntityRecord> records_of(const Interner& ents) {
  std::vector<EntityRecord> out;
  for (std::size_t i = 0; i < ents.keys().size(); ++i) out.push_back({static_cast<int>(i), ents.keys()[i], ""});
  return out;
}

}  // namespace

RawDataset import_grail(const fs::path& train_dir, const fs::path& test_dir, std::string name) {
  RawDataset ds;
  ds.name = std::move(name);
  Interner rels, train_ents, test_ents;
  ds.train.graph = intern(read_raw(train_dir / "train.txt"), train_ents, rels);
  ds.train.queries = intern(read_raw(train_dir / "valid.txt"), train_ents, rels);
  ds.test.graph = intern(read_raw(test_dir / "train.txt"), test_ents, rels);
  ds.test.queries = intern(read_raw(test_dir / "test.txt"), test_ents, rels);
  ds.train.entities = records_of(train_ents);
  ds.test.entities = records_of(test_ents);
  for (std::size_t i = 0; i < rels.keys().size(); ++i) {
    const int id = static_cast<int>(i);
    ds.relations.push_back(RelationRecord{id, rels.keys()[i], "", false, id});
  }
  return ds;
}

// Generator ------------------------------------------------------------------------

SynthProfile SynthProfile::fb_v1() { return SynthProfile{}; }

SynthProfile SynthProfile::toy() {
  SynthProfile p;
  p.name = "toy";
  p.relations = 6;
  p.train_entities = 14;
  p.train_graph = 30;
  p.valid = 6;
  p.test_entities = 12;
  p.test_graph = 24;
  p.test = 6;
  return p;
}

namespace {

constexpr const char* kTypeNouns[] = {"person", "film",  "city",  "company", "university", "award",
                                      "genre",  "country", "language", "team", "album", "instrument"};
constexpr const char* kVerbs[] = {"featured in", "located in", "member of",  "founded by",  "won",
                                  "produced by", "speaks",     "plays",      "studied at", "released by",
                                  "born in",     "works for",  "nominated for", "directed", "performs",
                                  "owns",        "based in",   "part of",    "influenced", "hosts"};
constexpr const char* kRegions[] = {"the north", "the coast", "the valley", "the capital",
                                    "the islands", "the east", "the plains", "the highlands"};
constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "tr"};
constexpr const char* kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};

struct RelSpec {
  enum Kind { base, compose, reverse } kind = base;
  int dom = 0, range = 0;
  int a = -1, b = -1;  // source relations for derived kinds
};

struct Fact {
  Triplet t;
  std::vector<Triplet> premises;
};

int pick(std::mt19937_64& rng, int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); }

std::string pseudo_word(std::mt19937_64& rng) {
  const int syllables = 2 + pick(rng, 2);
  std::string w;
  for (int s = 0; s < syllables; ++s) {
    w += kOnsets[pick(rng, static_cast<int>(std::size(kOnsets)))];
    w += kVowels[pick(rng, static_cast<int>(std::size(kVowels)))];
  }
  w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
  return w;
}

struct Side {
  std::vector<EntityRecord> entities;
  std::vector<int> type_of;
  std::vector<std::vector<int>> by_type;
};

Side make_entities(int n, int types, std::mt19937_64& rng, std::set<std::string>& used_names) {
  Side s;
  s.by_type.resize(static_cast<std::size_t>(types));
  for (int i = 0; i < n; ++i) {
    const int type = i < types ? i : pick(rng, types);
    std::string name;
    do {
      name = pseudo_word(rng);
      if (used_names.count(name)) name += " " + pseudo_word(rng);
    } while (!used_names.insert(name).second);
    const std::string desc = fmt::format("{} is a {} from {}.", name, kTypeNouns[type],
                                         kRegions[pick(rng, static_cast<int>(std::size(kRegions)))]);
    s.entities.push_back(EntityRecord{i, name, desc});
    s.type_of.push_back(type);
    s.by_type[static_cast<std::size_t>(type)].push_back(i);
  }
  return s;
}

// Facts for one side given per-base-relation fact counts.
std::vector<Fact> make_facts(const Side& side, const std::vector<RelSpec>& specs, int per_base, std::mt19937_64& rng) {
  const int n_rel = static_cast<int>(specs.size());
  std::vector<std::vector<Triplet>> by_rel(static_cast<std::size_t>(n_rel));
  std::set<Triplet> seen;
  std::vector<Fact> facts;
  auto emit = [&](Triplet t, std::vector<Triplet> premises) {
    if (t.head == t.tail || !seen.insert(t).second) return;
    by_rel[static_cast<std::size_t>(t.rel)].push_back(t);
    facts.push_back(Fact{t, std::move(premises)});
  };
  // Popularity skew inside each type.
  auto draw = [&](int type) {
    const auto& pool = side.by_type[static_cast<std::size_t>(type)];
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto idx = static_cast<std::size_t>(std::pow(u, 1.6) * static_cast<double>(pool.size()));
    return pool[std::min(idx, pool.size() - 1)];
  };
  for (int r = 0; r < n_rel; ++r) {
    const RelSpec& s = specs[static_cast<std::size_t>(r)];
    if (s.kind != RelSpec::base) continue;
    for (int k = 0; k < per_base; ++k) emit(Triplet{draw(s.dom), r, draw(s.range)}, {});
  }
  for (int r = 0; r < n_rel; ++r) {
    const RelSpec& s = specs[static_cast<std::size_t>(r)];
    if (s.kind == RelSpec::reverse) {
      for (const Triplet& t : by_rel[static_cast<std::size_t>(s.a)]) {
        if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.85) emit(Triplet{t.tail, r, t.head}, {t});
      }
    } else if (s.kind == RelSpec::compose) {
      std::map<int, std::vector<Triplet>> b_by_head;
      for (const Triplet& t : by_rel[static_cast<std::size_t>(s.b)]) b_by_head[t.head].push_back(t);
      std::vector<Fact> cands;
      for (const Triplet& x : by_rel[static_cast<std::size_t>(s.a)]) {
        auto it = b_by_head.find(x.tail);
        if (it == b_by_head.end()) continue;
        for (const Triplet& y : it->second) cands.push_back(Fact{Triplet{x.head, r, y.tail}, {x, y}});
      }
      std::shuffle(cands.begin(), cands.end(), rng);
      const std::size_t cap = static_cast<std::size_t>(per_base) * 3 / 2 + 1;
      for (std::size_t k = 0; k < cands.size() && k < cap; ++k) emit(cands[k].t, cands[k].premises);
    }
  }
  return facts;
}

// Picks `queries` facts (mostly derived) and a graph of exactly `graph` facts
// containing every premise of the chosen queries. Returns false if too few facts.
bool split_side(std::vector<Fact> facts, int graph, int queries, std::mt19937_64& rng, SplitSide& out) {
  std::shuffle(facts.begin(), facts.end(), rng);
  std::set<Triplet> chosen_q, required;
  std::vector<Triplet> qs;
  const int want_base = queries / 5;
  int base_taken = 0;
  for (int pass = 0; pass < 2 && static_cast<int>(qs.size()) < queries; ++pass) {
    for (const Fact& f : facts) {
      if (static_cast<int>(qs.size()) >= queries) break;
      const bool derived = !f.premises.empty();
      if (pass == 0 && !derived && base_taken >= want_base) continue;
      if (chosen_q.count(f.t) || required.count(f.t)) continue;
      bool clash = false;
      for (const Triplet& p : f.premises) clash = clash || chosen_q.count(p) > 0;
      if (clash) continue;
      std::set<Triplet> extra;
      for (const Triplet& p : f.premises) {
        if (!required.count(p)) extra.insert(p);
      }
      if (static_cast<int>(required.size() + extra.size()) > graph) continue;
      chosen_q.insert(f.t);
      qs.push_back(f.t);
      required.insert(extra.begin(), extra.end());
      if (!derived) ++base_taken;
    }
  }
  if (static_cast<int>(qs.size()) < queries) return false;
  std::vector<Triplet> g(required.begin(), required.end());
  for (const Fact& f : facts) {
    if (static_cast<int>(g.size()) >= graph) break;
    if (chosen_q.count(f.t) || required.count(f.t)) continue;
    g.push_back(f.t);
  }
  if (static_cast<int>(g.size()) < graph) return false;
  std::sort(g.begin(), g.end());
  std::shuffle(g.begin(), g.end(), rng);
  out.graph = std::move(g);
  out.queries = std::move(qs);
  return true;
}

}  // namespace

RawDataset synthesize(const SynthProfile& p, std::uint64_t seed) {
  if (p.relations < 3) throw ContractError("synthesize: need at least 3 relations");
  if (p.train_entities < 4 || p.test_entities < 4) throw ContractError("synthesize: need at least 4 entities per side");
  std::mt19937_64 rng(seed ^ 0x73796e7468ULL);
  RawDataset ds;
  ds.name = p.name;
  ds.inductive = true;
  const int types = std::clamp(p.relations / 15, 2, static_cast<int>(std::size(kTypeNouns)));

  const int n_base = std::max(1, p.relations / 2);
  const int n_comp = std::max(1, p.relations / 3);
  std::vector<RelSpec> specs;
  for (int r = 0; r < n_base; ++r) specs.push_back(RelSpec{RelSpec::base, pick(rng, types), pick(rng, types)});
  for (int r = n_base; r < p.relations; ++r) {
    RelSpec s;
    const int a = pick(rng, n_base);
    if (r < n_base + n_comp) {
      std::vector<int> follow;
      for (int b = 0; b < n_base; ++b) {
        if (specs[static_cast<std::size_t>(b)].dom == specs[static_cast<std::size_t>(a)].range) follow.push_back(b);
      }
      if (follow.empty()) follow.push_back(a);
      const int b = follow[static_cast<std::size_t>(pick(rng, static_cast<int>(follow.size())))];
      s = RelSpec{RelSpec::compose, specs[static_cast<std::size_t>(a)].dom, specs[static_cast<std::size_t>(b)].range, a, b};
    } else {
      s = RelSpec{RelSpec::reverse, specs[static_cast<std::size_t>(a)].range, specs[static_cast<std::size_t>(a)].dom, a, -1};
    }
    specs.push_back(s);
  }
  std::set<std::string> rel_names;
  for (int r = 0; r < p.relations; ++r) {
    const RelSpec& s = specs[static_cast<std::size_t>(r)];
    std::string name = fmt::format("{} {} {}", kTypeNouns[s.dom], kVerbs[r % std::size(kVerbs)], kTypeNouns[s.range]);
    for (int k = 2; !rel_names.insert(name).second; ++k) {
      name = fmt::format("{} {} {} {}", kTypeNouns[s.dom], kVerbs[r % std::size(kVerbs)], kTypeNouns[s.range], k);
    }
    ds.relations.push_back(RelationRecord{r, name, fmt::format("Links a {} to a {}.", kTypeNouns[s.dom], kTypeNouns[s.range]),
                                          false, r});
  }

  std::set<std::string> used_names;
  auto build_side = [&](int n_ent, int graph, int queries, SplitSide& out) {
    Side side = make_entities(n_ent, types, rng, used_names);
    out.entities = side.entities;
    const int total = graph + queries;
    int per_base = std::max(1, total / (2 * n_base));
    for (int attempt = 0; attempt < 64; ++attempt) {
      std::mt19937_64 local(rng());
      std::vector<Fact> facts = make_facts(side, specs, per_base, local);
      if (static_cast<int>(facts.size()) >= total && split_side(std::move(facts), graph, queries, local, out)) return;
      per_base = per_base + std::max(1, per_base / 8);
    }
    throw ContractError(fmt::format("synthesize: could not reach {} graph + {} query triplets", graph, queries));
  };
  build_side(p.train_entities, p.train_graph, p.valid, ds.train);
  build_side(p.test_entities, p.test_graph, p.test, ds.test);
  return ds;
}

}  // namespace krlm
