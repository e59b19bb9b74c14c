// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "kedd/fusion.hpp"

#include <cmath>
#include <iostream>
#include <map>
#include <stdexcept>

namespace kedd::fusion {

namespace {

bool draw_mask(double p, std::mt19937_64& rng) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return std::bernoulli_distribution(p)(rng);
}

void check_probability(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("mask probability must lie in [0, 1]");
}

// Column mask [B, 1] from per-row flags.
Tensor row_mask(const std::vector<bool>& flags) {
  std::vector<double> v(flags.size());
  for (std::size_t i = 0; i < flags.size(); ++i) v[i] = flags[i] ? 1.0 : 0.0;
  return Tensor::from({flags.size(), 1}, std::move(v));
}

}  // namespace

std::string to_string(Task t) {
  switch (t) {
    case Task::dti: return "dti";
    case Task::dp: return "dp";
    case Task::ddi: return "ddi";
    case Task::ppi: return "ppi";
  }
  return "?";
}

Task parse_task(const std::string& s) {
  if (s == "dti") return Task::dti;
  if (s == "dp") return Task::dp;
  if (s == "ddi") return Task::ddi;
  if (s == "ppi") return Task::ppi;
  throw std::invalid_argument("unknown task '" + s + "' (expected dti, dp, ddi, ppi)");
}

std::string to_string(EntityKind k) { return k == EntityKind::drug ? "drug" : "protein"; }

TaskSpec TaskSpec::make(Task task, std::size_t label_arity) {
  TaskSpec s;
  s.task = task;
  s.label_arity = label_arity;
  switch (task) {
    case Task::dti:
      s.kind_a = EntityKind::drug;
      s.kind_b = EntityKind::protein;
      break;
    case Task::dp:
      s.kind_a = EntityKind::drug;
      s.kind_b.reset();
      break;
    case Task::ddi:
      s.kind_a = EntityKind::drug;
      s.kind_b = EntityKind::drug;
      break;
    case Task::ppi:
      s.kind_a = EntityKind::protein;
      s.kind_b = EntityKind::protein;
      break;
  }
  s.validate();
  return s;
}

void TaskSpec::validate() const {
  if (label_arity < 1) throw std::invalid_argument("task: label_arity must be >= 1");
  if (task != Task::ppi && label_arity != 1) throw std::invalid_argument("task: only ppi supports label_arity > 1");
  if (task == Task::dp && kind_b) throw std::invalid_argument("task: dp has no second entity");
  if (task != Task::dp && !kind_b) throw std::invalid_argument("task: pair task needs a second entity kind");
}

void SparseAttentionConfig::validate() const {
  if (heads < 1) throw std::invalid_argument("sparse attention: heads must be >= 1");
  if (k < 1) throw std::invalid_argument("sparse attention: k must be >= 1");
  if (query_dim < 1) throw std::invalid_argument("sparse attention: query_dim must be >= 1");
  if (key_dim == 0 && query_dim % heads != 0) {
    throw std::invalid_argument("sparse attention: query_dim must be divisible by heads");
  }
}

ModalityBundle mask_modality(ModalityBundle bundle, double p, std::mt19937_64& rng) {
  check_probability(p);
  if (!ad::is_training() || !bundle.h_sk) return bundle;
  if (draw_mask(p, rng)) {
    bundle.h_sk.reset();
    bundle.sk_source = SkSource::sparse_attention;
  }
  return bundle;
}

Tensor topk_sparse_softmax(const Tensor& scores, std::size_t k) {
  if (scores.rank() == 0 || scores.dim(-1) == 0) throw ad::ShapeError("topk_sparse_softmax: empty entity axis");
  return ad::softmax_lastdim(ad::topk_mask(scores, k));
}

SparseAttentionParams::SparseAttentionParams(nn::ParameterStore& store, const std::string& name,
                                             const SparseAttentionConfig& config, std::size_t d_sk) {
  config.validate();
  const std::size_t width = config.heads * config.head_dim();
  w_q = store.create(name + ".w_q", {config.query_dim, width}, nn::InitSpec::kaiming(config.query_dim));
  w_k = store.create(name + ".w_k", {d_sk, width}, nn::InitSpec::kaiming(d_sk));
}

Tensor sparse_attention_lookup(const Tensor& h_xs, const Tensor& e, const SparseAttentionConfig& config,
                               const SparseAttentionParams& params, AttentionTrace* trace) {
  config.validate();
  if (h_xs.rank() != 2 || h_xs.dim(1) != config.query_dim) {
    throw ad::ShapeError("sparse_attention_lookup: queries " + ad::shape_str(h_xs.shape()) + " for query_dim " +
                         std::to_string(config.query_dim));
  }
  if (e.rank() != 2 || e.dim(0) == 0) throw ad::ShapeError("sparse_attention_lookup: E must be non-empty [N, d]");
  const std::size_t b = h_xs.dim(0), n = e.dim(0), h = config.heads, d = config.head_dim();
  std::size_t k = config.k;
  bool clamped = false;
  if (k > n) {
    static bool warned = false;
    if (!warned) {
      std::cerr << "warning: sparse attention k=" << k << " exceeds " << n << " KG entities; clamping\n";
      warned = true;
    }
    k = n;
    clamped = true;
  }
  Tensor q = ad::transpose(ad::reshape(ad::matmul(h_xs, params.w_q), {b, h, d}), 0, 1);   // [H, B, d]
  Tensor kk = ad::transpose(ad::reshape(ad::matmul(e, params.w_k), {n, h, d}), 0, 1);    // [H, N, d]
  Tensor scores = ad::scale(ad::matmul(q, ad::transpose(kk)), 1.0 / std::sqrt(static_cast<double>(d)));
  Tensor weights = topk_sparse_softmax(scores, k);  // [H, B, N]
  Tensor per_head = ad::matmul(weights, e);          // [H, B, d_SK]
  if (trace) {
    trace->weights = weights;
    trace->effective_k = k;
    trace->clamped = clamped;
  }
  return ad::mean_lastdim(ad::transpose(ad::transpose(per_head, 0, 1), 1, 2));
}

Tensor sk_feature(const Tensor& h_a_sk, const Tensor* h_b_sk, const nn::Linear& fc, double dropout_rate) {
  Tensor other = h_b_sk ? *h_b_sk : Tensor::zeros(h_a_sk.shape());
  if (other.shape() != h_a_sk.shape()) {
    throw ad::ShapeError("sk_feature: sides differ: " + ad::shape_str(h_a_sk.shape()) + " vs " +
                         ad::shape_str(other.shape()));
  }
  Tensor joined = ad::concat({h_a_sk, other}, -1);
  if (joined.dim(-1) != fc.in_features()) {
    throw ad::ShapeError("sk_feature: joined width " + std::to_string(joined.dim(-1)) + " for projection of width " +
                         std::to_string(fc.in_features()));
  }
  return ad::dropout(fc(joined), dropout_rate);
}

FusionHead::FusionHead(nn::ParameterStore& store, const std::string& name, std::size_t in,
                       const std::vector<std::size_t>& hidden, std::size_t arity, double dropout_rate, bool zero_last)
    : dropout(dropout_rate) {
  std::size_t width = in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    layers.emplace_back(store, name + "." + std::to_string(i), width, hidden[i]);
    width = hidden[i];
  }
  layers.emplace_back(store, name + ".out", width, arity, zero_last);
}

Tensor fuse_and_predict(const Tensor& h_s, const Tensor* h_sk, const Tensor* h_uk, const TaskSpec& spec,
                        const FusionHead& head) {
  std::vector<Tensor> parts{h_s};
  if (spec.ablations.use_sk) {
    if (!h_sk) throw std::invalid_argument("fuse_and_predict: structured-knowledge feature required");
    parts.push_back(*h_sk);
  }
  if (spec.ablations.use_uk) {
    if (!h_uk) throw std::invalid_argument("fuse_and_predict: text feature required");
    parts.push_back(*h_uk);
  }
  Tensor x = ad::concat(parts, -1);
  if (head.layers.empty() || x.dim(-1) != head.layers.front().in_features()) {
    throw ad::ShapeError("fuse_and_predict: fused width " + std::to_string(x.dim(-1)) + " does not match head input");
  }
  for (std::size_t i = 0; i + 1 < head.layers.size(); ++i) x = ad::dropout(ad::relu(head.layers[i](x)), head.dropout);
  Tensor logits = head.layers.back()(x);
  if (logits.dim(-1) != spec.label_arity) throw ad::ShapeError("fuse_and_predict: head arity differs from task");
  return logits;
}

// ---------------------------------------------------------------------------
// Model

KeddModel::KeddModel(nn::ParameterStore& store, ModelConfig config, Tensor e)
    : config_(std::move(config)),
      e_(std::move(e)),
      gin_(store, "gin", config_.gin),
      mcnn_(store, "mcnn", config_.mcnn),
      text_(store, "text", config_.text, config_.vocab_size) {
  config_.task.validate();
  if (!e_.defined() || e_.rank() != 2 || e_.dim(0) == 0) throw ad::ShapeError("model: KG embedding must be [N, d], N >= 1");
  if (e_.requires_grad()) e_ = e_.detach();
  const std::size_t d_sk = e_.dim(1);
  config_.attention.query_dim = d_sk;
  config_.attention.validate();
  project_drug_ = nn::Linear(store, "project.drug", config_.gin.hidden_dim, d_sk);
  project_protein_ = nn::Linear(store, "project.protein", config_.mcnn.output_dim, d_sk);
  attention_ = SparseAttentionParams(store, "attention", config_.attention, d_sk);
  sk_fc_ = nn::Linear(store, "sk_head", 2 * d_sk, config_.sk_dim);
  uk_fc_ = nn::Linear(store, "uk_head", config_.text.model_dim, config_.uk_dim);
  std::size_t fused = structure_width(config_.task.kind_a);
  if (config_.task.kind_b) fused += structure_width(*config_.task.kind_b);
  if (config_.task.ablations.use_sk) fused += config_.sk_dim;
  if (config_.task.ablations.use_uk) fused += config_.uk_dim;
  head_ = FusionHead(store, "fusion", fused, config_.fusion_hidden, config_.task.label_arity, config_.fusion_dropout);
}

std::size_t KeddModel::structure_width(EntityKind k) const {
  return k == EntityKind::drug ? config_.gin.hidden_dim : config_.mcnn.output_dim;
}

Tensor KeddModel::projected_structure(EntityKind kind, const Tensor& h_xs) const {
  return kind == EntityKind::drug ? project_drug_(h_xs) : project_protein_(h_xs);
}

Tensor KeddModel::encode_structures(const std::vector<const ModelInput*>& side, EntityKind kind) const {
  std::map<const ModelInput*, std::int64_t> slot;
  std::vector<const ModelInput*> unique;
  std::vector<std::int64_t> rows;
  rows.reserve(side.size());
  for (const auto* in : side) {
    if (in->kind != kind) throw std::invalid_argument("model: entity kind does not match task");
    auto [it, inserted] = slot.emplace(in, static_cast<std::int64_t>(unique.size()));
    if (inserted) unique.push_back(in);
    rows.push_back(it->second);
  }
  Tensor feats;
  if (kind == EntityKind::drug) {
    std::vector<const structure::MolecularGraph*> graphs;
    for (const auto* in : unique) {
      if (!in->graph) throw std::invalid_argument("model: drug without molecular graph");
      graphs.push_back(in->graph);
    }
    feats = gin_.encode_batch(graphs);
  } else {
    std::vector<const structure::ProteinSequence*> seqs;
    for (const auto* in : unique) {
      if (!in->protein) throw std::invalid_argument("model: protein without sequence");
      seqs.push_back(in->protein);
    }
    feats = mcnn_.encode_batch(seqs);
  }
  return ad::embedding_lookup(feats, rows);
}

Tensor KeddModel::side_sk(const std::vector<const ModelInput*>& side, const Tensor& h_xs, EntityKind kind,
                          double mask_p, std::mt19937_64* mask_rng, std::vector<SkSource>& routes) const {
  const bool use_sa = config_.task.ablations.use_sparse_attention;
  const bool may_mask = use_sa && mask_rng && ad::is_training() && mask_p > 0.0;
  std::vector<std::int64_t> rows(side.size(), 0);
  std::vector<bool> present(side.size(), false), routed(side.size(), false);
  routes.assign(side.size(), SkSource::masked_zero);
  bool any_routed = false;
  for (std::size_t i = 0; i < side.size(); ++i) {
    const auto& row = side[i]->kg_row;
    if (row && *row >= e_.dim(0)) throw std::out_of_range("model: KG row " + std::to_string(*row) + " outside E");
    const bool masked = row && may_mask && draw_mask(mask_p, *mask_rng);
    if (row && !masked) {
      present[i] = true;
      rows[i] = static_cast<std::int64_t>(*row);
      routes[i] = SkSource::kg_lookup;
    } else if (use_sa) {
      routed[i] = true;
      any_routed = true;
      routes[i] = SkSource::sparse_attention;
    }
  }
  Tensor out = ad::mul(ad::embedding_lookup(e_, rows), row_mask(present));
  if (any_routed) {
    Tensor sa = sparse_attention_lookup(projected_structure(kind, h_xs), e_, config_.attention, attention_);
    out = ad::add(out, ad::mul(sa, row_mask(routed)));
  }
  return out;
}

Features KeddModel::features(const std::vector<PairInput>& batch, double mask_p, std::mt19937_64* mask_rng) const {
  check_probability(mask_p);
  if (batch.empty()) throw std::invalid_argument("model: empty batch");
  const auto& spec = config_.task;
  std::vector<const ModelInput*> side_a, side_b;
  for (const auto& p : batch) {
    if (!p.a) throw std::invalid_argument("model: sample without first entity");
    if (spec.pair() != (p.b != nullptr)) {
      throw std::invalid_argument(spec.pair() ? "model: pair task sample lacks second entity"
                                              : "model: single-entity task sample has a second entity");
    }
    side_a.push_back(p.a);
    if (p.b) side_b.push_back(p.b);
  }
  Features f;
  Tensor hs_a = encode_structures(side_a, spec.kind_a);
  Tensor hs_b = spec.pair() ? encode_structures(side_b, *spec.kind_b) : Tensor();
  f.h_s = spec.pair() ? ad::concat({hs_a, hs_b}, -1) : hs_a;

  if (spec.ablations.use_sk) {
    Tensor sk_a = side_sk(side_a, hs_a, spec.kind_a, mask_p, mask_rng, f.route_a);
    if (spec.pair()) {
      Tensor sk_b = side_sk(side_b, hs_b, *spec.kind_b, mask_p, mask_rng, f.route_b);
      f.h_sk = sk_feature(sk_a, &sk_b, sk_fc_, config_.branch_dropout);
    } else {
      f.h_sk = sk_feature(sk_a, nullptr, sk_fc_, config_.branch_dropout);
    }
  }
  if (spec.ablations.use_uk) {
    static const text::TextDocument empty;
    std::vector<std::vector<std::int64_t>> ids;
    std::size_t longest = 0;
    for (const auto& p : batch) {
      const auto* ta = p.a->text ? p.a->text : &empty;
      const text::TextDocument* tb = p.b ? (p.b->text ? p.b->text : &empty) : nullptr;
      ids.push_back(text::build_input(*ta, tb, config_.text.max_tokens).ids);
      longest = std::max(longest, ids.back().size());
    }
    for (auto& row : ids) row.resize(longest, text::kPad);
    f.h_uk = text::uk_feature(text_.encode_ids(ids), uk_fc_, config_.branch_dropout);
  }
  return f;
}

Tensor KeddModel::forward(const std::vector<PairInput>& batch, double mask_p, std::mt19937_64* mask_rng) const {
  Features f = features(batch, mask_p, mask_rng);
  return fuse_and_predict(f.h_s, f.h_sk.defined() ? &f.h_sk : nullptr, f.h_uk.defined() ? &f.h_uk : nullptr,
                          config_.task, head_);
}

}  // namespace kedd::fusion
