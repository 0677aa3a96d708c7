// SPDX-License-Identifier: Apache-2.0

#include "krlm/kg.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>

namespace krlm {

KnowledgeGraph::KnowledgeGraph(std::vector<EntityRecord> entities, std::vector<RelationRecord> relations,
                               std::vector<Triplet> triplets, bool augmented)
    : entities_(std::move(entities)),
      relations_(std::move(relations)),
      triplets_(std::move(triplets)),
      augmented_(augmented) {
  for (std::size_t i = 0; i < entities_.size(); ++i) {
    if (entities_[i].id != static_cast<int>(i)) throw DataError("entity ids must be dense and ordered");
  }
  for (std::size_t i = 0; i < relations_.size(); ++i) {
    if (relations_[i].id != static_cast<int>(i)) throw DataError("relation ids must be dense and ordered");
  }
  if (augmented_ && relations_.size() % 2 != 0) throw DataError("augmented graph needs an even relation count");
  for (const Triplet& t : triplets_) {
    if (t.head < 0 || t.head >= entity_count() || t.tail < 0 || t.tail >= entity_count() || t.rel < 0 ||
        t.rel >= relation_count()) {
      throw DataError(fmt::format("triplet ({}, {}, {}) references an unknown id", t.head, t.rel, t.tail));
    }
  }
  index();
}

void KnowledgeGraph::index() {
  const int n = entity_count();
  edges_.clear();
  edges_.reserve(triplets_.size());
  for (const Triplet& t : triplets_) edges_.push_back(TypedEdge{t.head, t.rel, t.tail});

  auto build = [&](auto key, std::vector<int>& offsets, std::vector<int>& list) {
    offsets.assign(static_cast<std::size_t>(n) + 1, 0);
    for (const Triplet& t : triplets_) ++offsets[static_cast<std::size_t>(key(t)) + 1];
    for (int i = 0; i < n; ++i) offsets[static_cast<std::size_t>(i) + 1] += offsets[static_cast<std::size_t>(i)];
    list.assign(triplets_.size(), 0);
    std::vector<int> cursor(offsets.begin(), offsets.end() - 1);
    for (std::size_t k = 0; k < triplets_.size(); ++k) {
      list[static_cast<std::size_t>(cursor[static_cast<std::size_t>(key(triplets_[k]))]++)] = static_cast<int>(k);
    }
  };
  build([](const Triplet& t) { return t.tail; }, in_offsets_, in_edges_);
  build([](const Triplet& t) { return t.head; }, out_offsets_, out_edges_);

  sorted_index_.resize(triplets_.size());
  for (std::size_t k = 0; k < triplets_.size(); ++k) sorted_index_[k] = static_cast<int>(k);
  std::sort(sorted_index_.begin(), sorted_index_.end(),
            [&](int a, int b) { return triplets_[static_cast<std::size_t>(a)] < triplets_[static_cast<std::size_t>(b)]; });
  sorted_.clear();
  for (int k : sorted_index_) sorted_.push_back(triplets_[static_cast<std::size_t>(k)]);
  if (std::adjacent_find(sorted_.begin(), sorted_.end()) != sorted_.end()) {
    throw DataError("knowledge graph contains duplicate triplets");
  }
}

std::span<const int> KnowledgeGraph::incoming(int entity) const {
  const auto b = static_cast<std::size_t>(in_offsets_[static_cast<std::size_t>(entity)]);
  const auto e = static_cast<std::size_t>(in_offsets_[static_cast<std::size_t>(entity) + 1]);
  return std::span<const int>(in_edges_).subspan(b, e - b);
}

std::span<const int> KnowledgeGraph::outgoing(int entity) const {
  const auto b = static_cast<std::size_t>(out_offsets_[static_cast<std::size_t>(entity)]);
  const auto e = static_cast<std::size_t>(out_offsets_[static_cast<std::size_t>(entity) + 1]);
  return std::span<const int>(out_edges_).subspan(b, e - b);
}

std::optional<int> KnowledgeGraph::find(const Triplet& t) const {
  auto it = std::lower_bound(sorted_.begin(), sorted_.end(), t);
  if (it == sorted_.end() || *it != t) return std::nullopt;
  return sorted_index_[static_cast<std::size_t>(it - sorted_.begin())];
}

bool KnowledgeGraph::contains(const Triplet& t) const { return find(t).has_value(); }

int KnowledgeGraph::inverse_of(int rel) const {
  if (!augmented_) throw ContractError("inverse_of on a graph without inverse relations");
  const int j = base_relation_count();
  return rel < j ? rel + j : rel - j;
}

// Loading ---------------------------------------------------------------------

namespace {

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

struct DescriptionRow {
  std::string key;
  std::string name;
  std::string description;
};

std::vector<DescriptionRow> read_descriptions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open description file: " + path.string());
  std::vector<DescriptionRow> rows;
  std::unordered_set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() < 2) {
      throw DataError(fmt::format("{}:{}: expected id<TAB>name<TAB>description", path.string(), lineno));
    }
    DescriptionRow row{cols[0], cols[1], cols.size() > 2 ? cols[2] : std::string()};
    for (std::size_t k = 3; k < cols.size(); ++k) row.description += "\t" + cols[k];
    if (row.name.empty()) throw DataError(fmt::format("{}:{}: empty name", path.string(), lineno));
    if (!seen.insert(row.key).second) {
      throw DataError(fmt::format("{}:{}: duplicate description id '{}'", path.string(), lineno, row.key));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// Resolves a triplet field against description-file keys first, then names.
class Resolver {
 public:
  template <typename Records>
  Resolver(const Records& records, const std::vector<std::string>& keys) {
    for (const auto& r : records) by_name_.emplace(r.name, r.id);
    for (std::size_t i = 0; i < keys.size(); ++i) by_key_.emplace(keys[i], static_cast<int>(i));
    // Graphs built in memory carry no keys; fall back to the dense id.
    if (keys.empty()) {
      for (const auto& r : records) by_key_.emplace(std::to_string(r.id), r.id);
    }
  }
  std::optional<int> resolve(const std::string& token) const {
    if (auto it = by_key_.find(token); it != by_key_.end()) return it->second;
    if (auto it = by_name_.find(token); it != by_name_.end()) return it->second;
    return std::nullopt;
  }

 private:
  std::unordered_map<std::string, int> by_key_;
  std::unordered_map<std::string, int> by_name_;
};

}  // namespace

Vocabulary load_vocabulary(const std::filesystem::path& entity_desc_file,
                           const std::filesystem::path& relation_desc_file) {
  Vocabulary v;
  for (auto& row : read_descriptions(entity_desc_file)) {
    v.entities.push_back(
        EntityRecord{static_cast<int>(v.entities.size()), std::move(row.name), std::move(row.description)});
    v.entity_keys.push_back(std::move(row.key));
  }
  for (auto& row : read_descriptions(relation_desc_file)) {
    const int id = static_cast<int>(v.relations.size());
    v.relations.push_back(RelationRecord{id, std::move(row.name), std::move(row.description), false, id});
    v.relation_keys.push_back(std::move(row.key));
  }
  return v;
}

std::vector<Triplet> load_triplets(const std::filesystem::path& path, const Vocabulary& vocab, int* duplicates,
                                   bool dedup) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open triplet file: " + path.string());
  const Resolver ents(vocab.entities, vocab.entity_keys);
  const Resolver rels(vocab.relations, vocab.relation_keys);
  std::vector<Triplet> out;
  std::set<Triplet> seen;
  int dups = 0;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() != 3) {
      throw DataError(fmt::format("{}:{}: expected head<TAB>relation<TAB>tail", path.string(), lineno));
    }
    auto h = ents.resolve(cols[0]);
    auto r = rels.resolve(cols[1]);
    auto t = ents.resolve(cols[2]);
    if (!h) throw DataError(fmt::format("{}:{}: unknown entity '{}'", path.string(), lineno, cols[0]));
    if (!r) throw DataError(fmt::format("{}:{}: unknown relation '{}'", path.string(), lineno, cols[1]));
    if (!t) throw DataError(fmt::format("{}:{}: unknown entity '{}'", path.string(), lineno, cols[2]));
    Triplet tr{*h, *r, *t};
    if (!seen.insert(tr).second) {
      ++dups;
      if (dedup) continue;
    }
    out.push_back(tr);
  }
  if (duplicates != nullptr) *duplicates = dups;
  return out;
}

KnowledgeGraph load_graph(const std::filesystem::path& triplet_file, const std::filesystem::path& entity_desc_file,
                          const std::filesystem::path& relation_desc_file, LoadReport* report) {
  Vocabulary vocab = load_vocabulary(entity_desc_file, relation_desc_file);
  int dups = 0;
  auto triplets = load_triplets(triplet_file, vocab, &dups);
  KnowledgeGraph kg(std::move(vocab.entities), std::move(vocab.relations), std::move(triplets), false);
  if (report != nullptr) {
    report->entity_count = kg.entity_count();
    report->relation_count = kg.relation_count();
    report->triplet_count = static_cast<int>(kg.triplets().size());
    report->duplicate_count = dups;
  }
  return kg;
}

KnowledgeGraph augment_inverses(const KnowledgeGraph& kg) {
  if (kg.augmented()) throw ContractError("augment_inverses: graph is already augmented");
  const int j = kg.relation_count();
  std::vector<RelationRecord> rels = kg.relations();
  for (int r = 0; r < j; ++r) {
    const RelationRecord& base = kg.relations()[static_cast<std::size_t>(r)];
    rels.push_back(RelationRecord{r + j, std::string(kInversePrefix) + base.name, base.description, true, r});
  }
  std::vector<Triplet> trips = kg.triplets();
  trips.reserve(trips.size() * 2);
  for (const Triplet& t : kg.triplets()) trips.push_back(Triplet{t.tail, t.rel + j, t.head});
  return KnowledgeGraph(kg.entities(), std::move(rels), std::move(trips), true);
}

KnowledgeGraph strip_inverses(const KnowledgeGraph& kg) {
  if (!kg.augmented()) throw ContractError("strip_inverses: graph has no inverse relations");
  const int j = kg.base_relation_count();
  std::vector<RelationRecord> rels(kg.relations().begin(), kg.relations().begin() + j);
  std::vector<Triplet> trips;
  for (const Triplet& t : kg.triplets()) {
    if (t.rel < j) trips.push_back(t);
  }
  return KnowledgeGraph(kg.entities(), std::move(rels), std::move(trips), false);
}

// Relational graph ---------------------------------------------------------------

std::string_view pattern_name(Pattern p) {
  switch (p) {
    case Pattern::h2t: return "h2t";
    case Pattern::h2h: return "h2h";
    case Pattern::t2h: return "t2h";
    case Pattern::t2t: return "t2t";
  }
  return "?";
}

RelationalGraph build_relational_graph(const KnowledgeGraph& kg) {
  if (!kg.augmented()) throw ContractError("build_relational_graph: graph must be inverse-augmented");
  const int n_rel = kg.relation_count();
  RelationalGraph rg;
  rg.node_count = n_rel;

  // Per-entity occurrence counts by role.
  struct Incidence {
    std::map<int, int> head;  // relation -> number of triplets with this entity as head
    std::map<int, int> tail;
    std::set<int> self_loops;
  };
  std::vector<Incidence> inc(static_cast<std::size_t>(kg.entity_count()));
  for (const Triplet& t : kg.triplets()) {
    ++inc[static_cast<std::size_t>(t.head)].head[t.rel];
    ++inc[static_cast<std::size_t>(t.tail)].tail[t.rel];
    if (t.head == t.tail) inc[static_cast<std::size_t>(t.head)].self_loops.insert(t.rel);
  }

  std::unordered_set<std::uint64_t> seen;
  auto key = [n_rel](int src, Pattern p, int dst) {
    return (static_cast<std::uint64_t>(dst) * kPatternCount + static_cast<std::uint64_t>(p)) *
               static_cast<std::uint64_t>(n_rel) +
           static_cast<std::uint64_t>(src);
  };
  auto emit = [&](int src, Pattern p, int dst) {
    if (seen.insert(key(src, p, dst)).second) rg.edges.push_back(TypedEdge{src, static_cast<int>(p), dst});
  };

  for (const Incidence& e : inc) {
    // Same-role pairs: a self edge needs two occurrences of the relation in that role.
    for (const auto& [r1, c1] : e.head) {
      for (const auto& [r2, c2] : e.head) {
        if (r1 != r2 || c1 >= 2) emit(r1, Pattern::h2h, r2);
      }
    }
    for (const auto& [r1, c1] : e.tail) {
      for (const auto& [r2, c2] : e.tail) {
        if (r1 != r2 || c1 >= 2) emit(r1, Pattern::t2t, r2);
      }
    }
    // Cross-role pairs: the only non-distinct witness is a lone self-loop.
    for (const auto& [r1, ch] : e.head) {
      for (const auto& [r2, ct] : e.tail) {
        if (r1 == r2 && ch == 1 && ct == 1 && e.self_loops.count(r1) != 0) continue;
        emit(r1, Pattern::h2t, r2);
        emit(r2, Pattern::t2h, r1);
      }
    }
  }
  std::sort(rg.edges.begin(), rg.edges.end(), [](const TypedEdge& a, const TypedEdge& b) {
    return std::tie(a.dst, a.type, a.src) < std::tie(b.dst, b.type, b.src);
  });
  return rg;
}

}  // namespace krlm
