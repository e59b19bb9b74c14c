// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Entity and sample ingestion, KG linking, train/valid/test splitting,
// leakage filtering, and generated benchmark worlds.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "kedd/fusion.hpp"
#include "kedd/kg.hpp"
#include "kedd/structure.hpp"

namespace kedd::data {

using fusion::EntityKind;

/// Malformed input file; the message carries `path:line`.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The samples file does not fit the requested task (wrong columns or arity).
class TaskMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EntityRecord {
  std::string id;
  EntityKind kind = EntityKind::drug;
  std::variant<structure::MolecularGraph, structure::ProteinSequence> structure =
      structure::MolecularGraph({6}, {});  // placeholder until assigned
  std::optional<std::string> kg_id;
  std::optional<std::string> text;

  const structure::MolecularGraph* graph() const { return std::get_if<structure::MolecularGraph>(&structure); }
  const structure::ProteinSequence* protein() const { return std::get_if<structure::ProteinSequence>(&structure); }
};

struct IngestionReport {
  std::size_t drugs = 0;
  std::size_t proteins = 0;
  std::size_t truncated = 0;
  std::size_t duplicate_bonds = 0;
  std::size_t missing_text = 0;
  std::size_t missing_kg = 0;

  std::size_t issues() const { return truncated + duplicate_bonds + missing_text + missing_kg; }
};

class EntityTable {
 public:
  /// Throws std::invalid_argument on a duplicate id or a kind/structure mismatch.
  std::size_t add(EntityRecord record);

  std::size_t size() const { return records_.size(); }
  const EntityRecord& operator[](std::size_t i) const { return records_[i]; }
  const std::vector<EntityRecord>& records() const { return records_; }
  std::optional<std::size_t> index_of(const std::string& id) const;
  const EntityRecord& at(const std::string& id) const;
  std::vector<std::string> ids(EntityKind kind) const;

 private:
  std::vector<EntityRecord> records_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Either path may be empty to skip that kind.
EntityTable load_entities(const std::filesystem::path& drugs_path, const std::filesystem::path& proteins_path,
                          IngestionReport* report = nullptr, std::size_t max_protein_len = 1024);
std::string serialize_drugs(const EntityTable& table);
std::string serialize_proteins(const EntityTable& table);
void save_entities(const EntityTable& table, const std::filesystem::path& drugs_path,
                   const std::filesystem::path& proteins_path);

struct KindCoverage {
  std::size_t linked = 0;
  std::size_t total = 0;
  double missing_ratio() const { return total ? 1.0 - static_cast<double>(linked) / static_cast<double>(total) : 0.0; }
};

struct CoverageReport {
  KindCoverage drugs;
  KindCoverage proteins;
  std::vector<std::string> unlinked;  // entity ids, table order
  std::vector<std::string> warnings;
};

/// Throws std::invalid_argument if any kg_id is absent from `kg`.
CoverageReport link_to_kg(const EntityTable& entities, const kg::KnowledgeGraph& kg);

/// Row of E for each entity (table order), looked up by kg_id in `kg_ids`.
std::vector<std::optional<std::size_t>> resolve_kg_rows(const EntityTable& entities,
                                                        const std::vector<std::string>& kg_ids);

enum class SplitTag : std::uint8_t { train, valid, test, none };
std::string to_string(SplitTag t);

struct Sample {
  std::string a;
  std::optional<std::string> b;
  std::vector<std::uint8_t> labels;
  SplitTag split = SplitTag::none;
  std::optional<std::string> group;
};

struct SampleSet {
  fusion::TaskSpec task;
  std::vector<Sample> samples;

  /// Label arity, id resolution against `entities` (with the right kinds), and
  /// no duplicate unordered pair.
  void validate(const EntityTable& entities) const;
  std::vector<std::size_t> indices(SplitTag tag) const;
};

/// `a,b,label[,label2,...][,group]`; DP files have no `b` column. The label
/// arity is taken from the file and must be 1 except for PPI.
SampleSet load_samples(const std::filesystem::path& path, fusion::Task task);
std::string serialize_samples(const SampleSet& set);
void save_samples(const SampleSet& set, const std::filesystem::path& path);

enum class SplitMode { random, warm, cold_drug, cold_protein, cold_cluster, precomputed };
std::string to_string(SplitMode m);
SplitMode parse_split_mode(const std::string& s);

struct SplitSpec {
  SplitMode mode = SplitMode::warm;
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
  std::size_t folds = 9;
  std::size_t fold = 0;  // which cold_cluster fold split_dataset applies
  std::uint64_t seed = 0;

  void validate() const;
};

struct Fold {
  std::vector<std::size_t> train, valid, test;  // sample indices
};

/// Tags every sample in place. Samples that belong to no side of a
/// cold_cluster fold are tagged `none`. Throws std::invalid_argument when the
/// mode is infeasible for the data.
void split_dataset(SampleSet& set, const SplitSpec& spec);

/// All folds of a cold_cluster split; drugs and proteins are each dealt
/// uniformly at random into sqrt(folds) groups.
std::vector<Fold> cold_cluster_folds(const SampleSet& set, const SplitSpec& spec);

/// Copy of `kg` without any edge joining the KG nodes of a valid or test pair.
kg::KnowledgeGraph filter_leakage(const kg::KnowledgeGraph& graph, const SampleSet& set, const EntityTable& entities,
                                  std::size_t* removed = nullptr);

struct SyntheticConfig {
  fusion::Task task = fusion::Task::dti;
  std::size_t drugs = 200;
  std::size_t proteins = 100;
  std::size_t samples = 2000;  // pairs; DP uses one sample per drug
  std::size_t latent_dim = 8;
  std::size_t label_arity = 1;
  double w_struct = 0.6;
  double w_kg = 0.9;
  double w_text = 0.3;
  /// When set, z splits into three blocks and each modality sees only its own.
  bool partitioned = false;
  double missing_sk = 0.3;
  std::size_t kg_degree = 16;     // edges sampled per entity
  double kg_temperature = 0.1;    // softmax temperature on cosine similarity
  std::size_t protein_length = 48;
  std::uint64_t seed = 0;

  void validate() const;
};

struct World {
  EntityTable entities;
  kg::KnowledgeGraph kg;
  SampleSet samples;
  std::vector<std::vector<double>> latent;  // table order

  std::uint64_t content_hash() const;
  /// drugs.jsonl, proteins.jsonl, kg_edges.tsv, kg_entities.txt, samples.csv.
  void write(const std::filesystem::path& dir) const;
};

World gen_synthetic(const SyntheticConfig& config);

}  // namespace kedd::data
