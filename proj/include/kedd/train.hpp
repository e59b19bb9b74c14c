// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Loss, ranking/classification metrics, Adam, the training loop with early
// stopping, checkpoints, and metrics reports.

#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "kedd/data.hpp"
#include "kedd/fusion.hpp"
#include "kedd/nn.hpp"
#include "kedd/text.hpp"

namespace kedd::train {

using ad::Tensor;
using LabelMatrix = std::vector<std::vector<std::uint8_t>>;

/// Mean binary cross-entropy with logits over every (sample, label) cell.
/// `logits` holds labels.size() * arity entries.
Tensor bce_loss(const Tensor& logits, const LabelMatrix& labels, std::size_t arity);

/// Probability that a random positive outranks a random negative, ties count
/// one half. Throws std::invalid_argument unless both classes occur.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Average precision: sum over distinct score levels (descending) of
/// precision times recall gained. Throws without positives.
double auprc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Pooled TP/FP/FN over all cells; 0 when there is nothing to score.
double micro_f1(const LabelMatrix& pred, const LabelMatrix& truth);

/// Independent stream for a named component of a run.
std::uint64_t derive_seed(std::uint64_t root, std::string_view component);

class Adam {
 public:
  Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step();
  void zero_grad();
  std::size_t steps() const { return t_; }
  double learning_rate() const { return lr_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  double mask_p = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-entity model inputs for a sample set. Keeps pointers into `entities`,
/// which must outlive it.
class Dataset {
 public:
  Dataset(const data::EntityTable& entities, data::SampleSet samples, const text::Vocabulary& vocab,
          const std::vector<std::optional<std::size_t>>& kg_rows);
  Dataset(const Dataset&) = delete;
  Dataset& operator=(const Dataset&) = delete;
  Dataset(Dataset&&) = default;

  const data::SampleSet& samples() const { return samples_; }
  std::size_t arity() const { return samples_.task.label_arity; }
  std::vector<fusion::PairInput> batch(std::span<const std::size_t> indices) const;
  LabelMatrix labels(std::span<const std::size_t> indices) const;

 private:
  const data::EntityTable* entities_;
  data::SampleSet samples_;
  std::vector<text::TextDocument> docs_;
  std::vector<fusion::ModelInput> inputs_;
  std::vector<std::size_t> a_, b_;  // entity index per sample
};

struct EvalResult {
  std::optional<double> auroc;  // empty when a class is absent
  std::optional<double> auprc;
  double micro_f1 = 0;
  double loss = 0;
  std::vector<double> probabilities;  // samples x arity, row-major
};

EvalResult evaluate(const fusion::KeddModel& model, const Dataset& data, std::span<const std::size_t> indices,
                    std::size_t batch_size = 64);

struct Blob {
  std::string name;
  ad::Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::uint64_t fingerprint = 0;
  std::vector<Blob> params;

  static Checkpoint capture(const nn::ParameterStore& store, std::uint64_t fingerprint);
  /// Names and shapes must match the store exactly.
  void restore(nn::ParameterStore& store) const;
  /// "KEDDCKP1", fingerprint, count, then per blob: name, rank, dims, values.
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FitResult {
  Checkpoint best;
  std::vector<double> loss_curve;   // mean training loss per epoch
  std::vector<double> valid_curve;  // validation metric per epoch (index 0 = at initialization)
  std::size_t best_epoch = 0;       // 0 = initialization
  bool stopped_early = false;
};

/// Adam over shuffled mini-batches of the train split; keeps the parameters of
/// the epoch with the best validation AUROC (micro-F1 for PPI) and restores
/// them into `store` before returning.
FitResult fit(const fusion::KeddModel& model, nn::ParameterStore& store, const Dataset& data, const TrainConfig& config,
              std::uint64_t fingerprint = 0);

/// Early-stopping score of an evaluation for `task`.
double selection_metric(const EvalResult& r, fusion::Task task);

struct MetricStat {
  double mean = 0;
  double std = 0;  // population std over runs
  std::size_t n = 0;
};

MetricStat summarize(const std::vector<double>& values);

struct RunRecord {
  std::uint64_t seed = 0;
  EvalResult test;
  FitResult fit;
};

/// JSON with per-metric mean/std over runs, per-run curves, and the config fingerprint.
nlohmann::json metrics_report(const std::vector<RunRecord>& runs, const std::string& fingerprint);

nlohmann::json to_json(const fusion::ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);

}  // namespace kedd::train
