// SPDX-License-Identifier: Apache-2.0
//
// Knowledge graph storage: loading from TSV files, inverse-relation
// augmentation, adjacency indexing, and the relational graph whose nodes are
// relations and whose typed edges record how two relations share entities.

#pragma once

#include "krlm/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace krlm {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EntityRecord {
  int id = 0;
  std::string name;
  std::string description;
};

struct RelationRecord {
  int id = 0;
  std::string name;
  std::string description;
  bool is_inverse = false;
  int base_id = 0;
};

struct Triplet {
  int head = 0;
  int rel = 0;
  int tail = 0;
  friend auto operator<=>(const Triplet&, const Triplet&) = default;
};

struct QueryTriplet {
  int head = 0;
  int rel = 0;
  std::optional<int> answer;
};

inline constexpr std::string_view kInversePrefix = "inverse of ";

class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;
  KnowledgeGraph(std::vector<EntityRecord> entities, std::vector<RelationRecord> relations,
                 std::vector<Triplet> triplets, bool augmented);

  const std::vector<EntityRecord>& entities() const { return entities_; }
  const std::vector<RelationRecord>& relations() const { return relations_; }
  const std::vector<Triplet>& triplets() const { return triplets_; }
  int entity_count() const { return static_cast<int>(entities_.size()); }
  int relation_count() const { return static_cast<int>(relations_.size()); }
  // J: number of base (non-inverse) relations.
  int base_relation_count() const { return augmented_ ? relation_count() / 2 : relation_count(); }
  bool augmented() const { return augmented_; }

  // Directed message-passing edges: triplet (h, r, t) becomes src=h, type=r, dst=t.
  // Edge k corresponds to triplets()[k].
  const std::vector<TypedEdge>& edges() const { return edges_; }
  // Indices into triplets() of edges entering / leaving each entity.
  std::span<const int> incoming(int entity) const;
  std::span<const int> outgoing(int entity) const;
  bool contains(const Triplet& t) const;
  // Index of triplet t in triplets(), if present.
  std::optional<int> find(const Triplet& t) const;
  int inverse_of(int rel) const;

 private:
  void index();

  std::vector<EntityRecord> entities_;
  std::vector<RelationRecord> relations_;
  std::vector<Triplet> triplets_;
  std::vector<TypedEdge> edges_;
  std::vector<int> in_offsets_, in_edges_, out_offsets_, out_edges_;
  std::vector<Triplet> sorted_;
  std::vector<int> sorted_index_;
  bool augmented_ = false;
};

struct LoadReport {
  int entity_count = 0;
  int relation_count = 0;
  int triplet_count = 0;
  int duplicate_count = 0;
};

// Entity and relation records plus the external ids they were declared with.
struct Vocabulary {
  std::vector<EntityRecord> entities;
  std::vector<RelationRecord> relations;
  std::vector<std::string> entity_keys;
  std::vector<std::string> relation_keys;
};

// Description files: `id<TAB>name<TAB>description`, one per line, no header.
// Dense ids follow declaration order.
Vocabulary load_vocabulary(const std::filesystem::path& entity_desc_file,
                           const std::filesystem::path& relation_desc_file);

// Triplet rows reference either description-file ids or names.
std::vector<Triplet> load_triplets(const std::filesystem::path& path, const Vocabulary& vocab,
                                   int* duplicates = nullptr, bool dedup = true);

KnowledgeGraph load_graph(const std::filesystem::path& triplet_file,
                          const std::filesystem::path& entity_desc_file,
                          const std::filesystem::path& relation_desc_file,
                          LoadReport* report = nullptr);

KnowledgeGraph augment_inverses(const KnowledgeGraph& kg);
KnowledgeGraph strip_inverses(const KnowledgeGraph& kg);

// Relational graph --------------------------------------------------------------

enum class Pattern : int { h2t = 0, h2h = 1, t2h = 2, t2t = 3 };
inline constexpr int kPatternCount = 4;
std::string_view pattern_name(Pattern p);

struct RelationalGraph {
  int node_count = 0;
  // Edge (src, pattern, dst) stored as TypedEdge{src, pattern, dst}; sorted by
  // (dst, pattern, src) with no duplicates.
  std::vector<TypedEdge> edges;
};

/// Builds the relational graph of an inverse-augmented KG.
///
/// For two distinct triplet occurrences x = (h1, r1, t1) and y = (h2, r2, t2):
///   h1 == h2  ->  (r1, h2h, r2)
///   t1 == t2  ->  (r1, t2t, r2)
///   h1 == t2  ->  (r1, h2t, r2)
///   t1 == h2  ->  (r1, t2h, r2)
/// Each typed edge appears once however many pairs witness it.
RelationalGraph build_relational_graph(const KnowledgeGraph& kg);

}  // namespace krlm
