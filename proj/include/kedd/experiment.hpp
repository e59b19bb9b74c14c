// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// One end-to-end run: split, leakage filtering, KG embedding, vocabulary,
// model construction, training, and test evaluation. Shared by the CLI and
// the acceptance checks.

#pragma once

#include <cstdint>
#include <json.hpp>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kedd/data.hpp"
#include "kedd/fusion.hpp"
#include "kedd/kg.hpp"
#include "kedd/text.hpp"
#include "kedd/train.hpp"

namespace kedd::experiment {

struct RunConfig {
  fusion::Task task = fusion::Task::dti;
  std::uint64_t seed = 0;  // root; every component stream derives from it
  data::SplitSpec split;
  kg::ProneConfig prone;
  fusion::ModelConfig model;
  train::TrainConfig train;
  std::size_t vocab_min_freq = 1;

  /// Flat dotted keys, e.g. "train.lr", "gin.hidden", "ablation.use_sk".
  nlohmann::json to_json() const;
  /// Sets one key; throws std::invalid_argument for unknown keys or bad types.
  void set(const std::string& key, const nlohmann::json& value);
  /// Applies every key of a flat object over the current values.
  void merge(const nlohmann::json& flat);
  static std::vector<std::string> keys();
  void validate() const;
  std::uint64_t fingerprint() const;
};

/// Component seeds derived from the root seed.
std::uint64_t split_seed(const RunConfig& c);
std::uint64_t kg_seed(const RunConfig& c);
std::uint64_t init_seed(const RunConfig& c);
std::uint64_t train_seed(const RunConfig& c);

struct Prepared {
  data::SampleSet samples;  // split tags applied
  kg::KnowledgeGraph graph; // leakage-filtered
  std::size_t edges_removed = 0;
  kg::EmbeddingMatrix e;
  text::Vocabulary vocab;
  std::vector<std::optional<std::size_t>> kg_rows;  // per entity
  data::CoverageReport coverage;
};

/// Tags `samples` with the split derived from the config's seed.
void apply_split(data::SampleSet& samples, const RunConfig& config);

/// Splits, filters the KG, embeds it, and builds the vocabulary from entity texts.
Prepared prepare(const data::EntityTable& entities, const kg::KnowledgeGraph& graph, data::SampleSet samples,
                 const RunConfig& config);

/// Model configuration with the task, vocabulary size, and E width filled in.
fusion::ModelConfig resolve_model(const RunConfig& config, const Prepared& prepared);

struct Model {
  std::unique_ptr<nn::ParameterStore> store;
  std::unique_ptr<fusion::KeddModel> model;
};

Model build_model(const RunConfig& config, const Prepared& prepared);

struct RunResult {
  Model model;
  train::FitResult fit;
  train::EvalResult test;
};

RunResult train_and_evaluate(const data::EntityTable& entities, const Prepared& prepared, const RunConfig& config);

}  // namespace kedd::experiment
