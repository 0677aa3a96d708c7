// SPDX-License-Identifier: Apache-2.0
//
// Dataset directories, a GraIL-layout importer, and a generator of
// rule-structured inductive splits with prescribed sizes.
//
// Directory layout:
//   entities.tsv, relations.tsv     id<TAB>name<TAB>description
//   train.tsv                       training graph (also the training queries)
//   valid.tsv                       validation queries over the training graph
//   test/entities.tsv               inductive test vocabulary (relations shared)
//   test/graph.tsv                  observed test graph
//   test/test.tsv                   test queries over the test graph
// Without a test/ directory the split is transductive and test.tsv sits at
// the top level, evaluated over the training graph.

#pragma once

#include "krlm/kg.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace krlm {

struct SplitSide {
  std::vector<EntityRecord> entities;
  std::vector<Triplet> graph;    // base relations only
  std::vector<Triplet> queries;  // valid (train side) or test (test side)
};

struct RawDataset {
  std::string name;
  std::vector<RelationRecord> relations;
  SplitSide train;
  SplitSide test;
  bool inductive = true;
};

// Loaded, validated and inverse-augmented.
struct Dataset {
  std::string name;
  std::string source;
  KnowledgeGraph train_graph;
  KnowledgeGraph test_graph;
  std::vector<Triplet> valid;
  std::vector<Triplet> test;
  bool inductive = true;
};

void write_dataset(const std::filesystem::path& dir, const RawDataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);
// Name recorded in dataset.json if present, else the directory name.
std::string dataset_name(const std::filesystem::path& dir);

// GraIL release layout: <train_dir>/{train,valid}.txt and <test_dir>/{train,test}.txt
// with tab-separated head, relation, tail identifiers.
RawDataset import_grail(const std::filesystem::path& train_dir, const std::filesystem::path& test_dir,
                        std::string name);

struct SynthProfile {
  std::string name = "fb-v1-surrogate";
  int relations = 180;
  int train_entities = 1594;
  int train_graph = 4245;
  int valid = 489;
  int test_entities = 1093;
  int test_graph = 1993;
  int test = 411;

  static SynthProfile fb_v1();
  static SynthProfile toy();
};

// Typed entities with pseudo-word names and type-bearing descriptions;
// base relations between types; derived relations defined by two-hop
// composition and by reversal of a base relation. Query triplets are
// derived facts whose supporting premises are kept in the graph.
RawDataset synthesize(const SynthProfile& profile, std::uint64_t seed);

}  // namespace krlm
