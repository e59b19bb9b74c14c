// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Multimodal fusion: structure, structured-knowledge, and text branches,
// multi-head top-k sparse attention over the KG embedding table for molecules
// without a KG link, modality masking, and the prediction MLP.

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "kedd/nn.hpp"
#include "kedd/structure.hpp"
#include "kedd/text.hpp"

namespace kedd::fusion {

using ad::Tensor;

enum class Task { dti, dp, ddi, ppi };
enum class EntityKind { drug, protein };

std::string to_string(Task t);
Task parse_task(const std::string& s);
std::string to_string(EntityKind k);

struct Ablations {
  bool use_sk = true;
  bool use_uk = true;
  bool use_sparse_attention = true;
};

struct TaskSpec {
  Task task = Task::dti;
  EntityKind kind_a = EntityKind::drug;
  std::optional<EntityKind> kind_b = EntityKind::protein;
  std::size_t label_arity = 1;
  Ablations ablations;

  /// Canonical entity kinds for a task; arity must be 1 except for PPI.
  static TaskSpec make(Task task, std::size_t label_arity = 1);
  bool pair() const { return kind_b.has_value(); }
  void validate() const;
};

struct SparseAttentionConfig {
  std::size_t heads = 4;
  std::size_t k = 16;
  std::size_t query_dim = 64;  // equals the KG embedding width
  std::size_t key_dim = 0;     // per-head; 0 means query_dim / heads

  std::size_t head_dim() const { return key_dim ? key_dim : query_dim / heads; }
  void validate() const;
};

enum class SkSource { kg_lookup, sparse_attention, masked_zero };

/// Per-molecule modality features.
struct ModalityBundle {
  Tensor h_s;
  std::optional<Tensor> h_sk;
  std::optional<Tensor> h_uk;
  SkSource sk_source = SkSource::kg_lookup;
};

/// In training mode, discards an available h_sk with probability p and routes
/// the molecule through sparse attention. Evaluation mode never masks.
ModalityBundle mask_modality(ModalityBundle bundle, double p, std::mt19937_64& rng);

/// softmax(Top(scores, k)) along the last axis.
Tensor topk_sparse_softmax(const Tensor& scores, std::size_t k);

struct SparseAttentionParams {
  Tensor w_q;  // [query_dim, heads * head_dim]
  Tensor w_k;  // [d_SK, heads * head_dim]

  SparseAttentionParams() = default;
  SparseAttentionParams(nn::ParameterStore& store, const std::string& name, const SparseAttentionConfig& config,
                        std::size_t d_sk);
};

struct AttentionTrace {
  Tensor weights;  // [heads, B, N]
  std::size_t effective_k = 0;
  bool clamped = false;
};

/// Rows [B, query_dim] of projected structure features attend over E [N, d_SK];
/// returns the head-averaged convex combinations [B, d_SK].
Tensor sparse_attention_lookup(const Tensor& h_xs, const Tensor& e, const SparseAttentionConfig& config,
                               const SparseAttentionParams& params, AttentionTrace* trace = nullptr);

/// Concatenates (or pads the missing side with zeros), projects, and applies dropout.
Tensor sk_feature(const Tensor& h_a_sk, const Tensor* h_b_sk, const nn::Linear& fc, double dropout_rate);

struct FusionHead {
  std::vector<nn::Linear> layers;
  double dropout = 0.1;

  FusionHead() = default;
  FusionHead(nn::ParameterStore& store, const std::string& name, std::size_t in, const std::vector<std::size_t>& hidden,
             std::size_t arity, double dropout, bool zero_last = false);
};

/// Concatenates the enabled branches and returns raw logits [B, label_arity].
Tensor fuse_and_predict(const Tensor& h_s, const Tensor* h_sk, const Tensor* h_uk, const TaskSpec& spec,
                        const FusionHead& head);

struct ModelConfig {
  TaskSpec task;
  structure::GinConfig gin;
  structure::McnnConfig mcnn;
  text::TransformerConfig text;
  std::size_t vocab_size = 5;
  SparseAttentionConfig attention;  // query_dim is overwritten by the width of E
  std::size_t sk_dim = 128;
  std::size_t uk_dim = 128;
  double branch_dropout = 0.1;
  std::vector<std::size_t> fusion_hidden = {256, 64};
  double fusion_dropout = 0.1;
};

/// Everything the model reads about one molecule.
struct ModelInput {
  EntityKind kind = EntityKind::drug;
  const structure::MolecularGraph* graph = nullptr;
  const structure::ProteinSequence* protein = nullptr;
  std::optional<std::size_t> kg_row;  // row of E
  const text::TextDocument* text = nullptr;
};

struct PairInput {
  const ModelInput* a = nullptr;
  const ModelInput* b = nullptr;  // null for DP
};

struct Features {
  Tensor h_s;   // [B, structure width]
  Tensor h_sk;  // [B, sk_dim], undefined when use_sk is off
  Tensor h_uk;  // [B, uk_dim], undefined when use_uk is off
  std::vector<SkSource> route_a, route_b;
};

class KeddModel {
 public:
  /// `e` is the frozen KG embedding table [N, d_SK]; it never receives gradients.
  KeddModel(nn::ParameterStore& store, ModelConfig config, Tensor e);

  /// `mask_rng` enables modality masking with probability `mask_p` (training mode only).
  Features features(const std::vector<PairInput>& batch, double mask_p = 0.0, std::mt19937_64* mask_rng = nullptr) const;
  Tensor forward(const std::vector<PairInput>& batch, double mask_p = 0.0, std::mt19937_64* mask_rng = nullptr) const;

  const ModelConfig& config() const { return config_; }
  const Tensor& embedding() const { return e_; }
  std::size_t structure_width(EntityKind k) const;

  /// Projected structure features [B, query_dim] for one side of a batch.
  Tensor projected_structure(EntityKind kind, const Tensor& h_xs) const;

 private:
  Tensor encode_structures(const std::vector<const ModelInput*>& side, EntityKind kind) const;
  Tensor side_sk(const std::vector<const ModelInput*>& side, const Tensor& h_xs, EntityKind kind, double mask_p,
                 std::mt19937_64* mask_rng, std::vector<SkSource>& routes) const;

  ModelConfig config_;
  Tensor e_;
  structure::GinEncoder gin_;
  structure::McnnEncoder mcnn_;
  text::TextEncoder text_;
  nn::Linear project_drug_;
  nn::Linear project_protein_;
  SparseAttentionParams attention_;
  nn::Linear sk_fc_;
  nn::Linear uk_fc_;
  FusionHead head_;
};

}  // namespace kedd::fusion
