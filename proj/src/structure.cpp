// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "kedd/structure.hpp"

#include <algorithm>
#include <memory>
#include <set>
#include <stdexcept>

namespace kedd::structure {

namespace {

using ad::CsrMatrix;

// Symmetric adjacency and per-order bond counts for graphs stacked row-wise.
struct BatchedTopology {
  std::shared_ptr<const CsrMatrix> adjacency;
  std::shared_ptr<const CsrMatrix> bond_counts;  // [N_total, 4]
};

BatchedTopology build_topology(std::size_t total, const std::vector<std::pair<std::size_t, const std::vector<Bond>*>>& parts) {
  std::vector<CsrMatrix::Triplet> adj, counts;
  for (const auto& [offset, bonds] : parts) {
    for (const auto& b : *bonds) {
      adj.push_back({offset + b.a, offset + b.b, 1.0});
      adj.push_back({offset + b.b, offset + b.a, 1.0});
      const auto order = static_cast<std::size_t>(b.order - 1);
      counts.push_back({offset + b.a, order, 1.0});
      counts.push_back({offset + b.b, order, 1.0});
    }
  }
  return {std::make_shared<const CsrMatrix>(CsrMatrix::from_triplets(total, total, std::move(adj))),
          std::make_shared<const CsrMatrix>(CsrMatrix::from_triplets(total, 4, std::move(counts)))};
}

Tensor gin_update(const Tensor& h, const BatchedTopology& topo, const Tensor& epsilon,
                  const std::function<Tensor(const Tensor&)>& mlp, const Tensor& bond_embedding) {
  Tensor agg = ad::spmm(topo.adjacency, h);
  if (bond_embedding.defined()) {
    if (bond_embedding.rank() != 2 || bond_embedding.dim(0) != 4 || bond_embedding.dim(1) != h.dim(1)) {
      throw ad::ShapeError("gin: bond embedding " + ad::shape_str(bond_embedding.shape()) + " for features " +
                           ad::shape_str(h.shape()));
    }
    agg = ad::add(agg, ad::spmm(topo.bond_counts, bond_embedding));
  }
  Tensor self = ad::mul(h, ad::add(epsilon, Tensor::scalar(1.0)));
  return mlp(ad::add(self, agg));
}

}  // namespace

MolecularGraph::MolecularGraph(std::vector<int> atomic_numbers, std::vector<Bond> bonds)
    : atoms_(std::move(atomic_numbers)) {
  if (atoms_.empty()) throw std::invalid_argument("molecular graph needs at least one atom");
  for (std::size_t i = 0; i < atoms_.size(); ++i) {
    if (atoms_[i] < 0) throw std::invalid_argument("atom " + std::to_string(i) + " has negative atomic number");
  }
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& b : bonds) {
    if (b.a >= atoms_.size() || b.b >= atoms_.size()) {
      throw std::invalid_argument("bond (" + std::to_string(b.a) + ", " + std::to_string(b.b) +
                                  ") references a missing atom");
    }
    if (b.a == b.b) throw std::invalid_argument("self loop on atom " + std::to_string(b.a));
    if (b.order < 1 || b.order > 4) throw std::invalid_argument("bond order " + std::to_string(b.order) + " not in 1..4");
    if (!seen.insert({std::min(b.a, b.b), std::max(b.a, b.b)}).second) {
      ++duplicates_removed_;
      continue;
    }
    bonds_.push_back(b);
  }
}

MolecularGraph MolecularGraph::permuted(const std::vector<std::size_t>& perm) const {
  if (perm.size() != atoms_.size()) throw std::invalid_argument("permutation size mismatch");
  std::vector<int> atoms(atoms_.size());
  for (std::size_t i = 0; i < atoms_.size(); ++i) atoms.at(perm[i]) = atoms_[i];
  std::vector<Bond> bonds;
  for (const auto& b : bonds_) bonds.push_back({perm[b.a], perm[b.b], b.order});
  return MolecularGraph(std::move(atoms), std::move(bonds));
}

ProteinSequence::ProteinSequence(std::string residues, std::size_t max_len) : residues_(std::move(residues)) {
  for (std::size_t i = 0; i < residues_.size(); ++i) {
    if (kProteinAlphabet.find(residues_[i]) == std::string_view::npos) {
      throw std::invalid_argument("residue '" + std::string(1, residues_[i]) + "' at position " + std::to_string(i) +
                                  " is outside the amino-acid alphabet");
    }
  }
  if (residues_.empty()) throw std::invalid_argument("protein sequence is empty");
  if (max_len > 0 && residues_.size() > max_len) {
    residues_.resize(max_len);
    truncated_ = true;
  }
}

std::vector<std::int64_t> ProteinSequence::indices() const {
  std::vector<std::int64_t> out;
  out.reserve(residues_.size());
  for (char c : residues_) out.push_back(static_cast<std::int64_t>(kProteinAlphabet.find(c)));
  return out;
}

void GinConfig::validate() const {
  if (num_layers < 1) throw std::invalid_argument("gin: num_layers must be >= 1");
  if (hidden_dim < 1) throw std::invalid_argument("gin: hidden_dim must be >= 1");
}

void McnnConfig::validate() const {
  if (branch_depths.size() != 3) throw std::invalid_argument("mcnn: exactly three branches required");
  std::set<std::size_t> distinct(branch_depths.begin(), branch_depths.end());
  if (distinct.size() != 3 || distinct.count(0)) {
    throw std::invalid_argument("mcnn: branch depths must be three distinct positive values");
  }
  if (kernel_width < 1 || kernel_width % 2 == 0) throw std::invalid_argument("mcnn: kernel width must be odd");
  if (channels < 1 || embedding_dim < 1 || output_dim < 1) throw std::invalid_argument("mcnn: dims must be >= 1");
}

Tensor gin_layer_forward(const Tensor& node_feats, const std::vector<Bond>& edges, const Tensor& epsilon,
                         const std::function<Tensor(const Tensor&)>& mlp, const Tensor& bond_embedding) {
  if (node_feats.rank() != 2) throw ad::ShapeError("gin: node features must be [n, d], got " + ad::shape_str(node_feats.shape()));
  const std::size_t n = node_feats.dim(0);
  for (const auto& e : edges) {
    if (e.a >= n || e.b >= n) {
      throw std::out_of_range("gin: edge (" + std::to_string(e.a) + ", " + std::to_string(e.b) + ") outside " +
                              std::to_string(n) + " nodes");
    }
    if (e.order < 1 || e.order > 4) throw std::invalid_argument("gin: bond order must lie in 1..4");
  }
  return gin_update(node_feats, build_topology(n, {{0, &edges}}), epsilon, mlp, bond_embedding);
}

Tensor gin_layer_forward_batched(const Tensor& node_feats, const std::vector<const MolecularGraph*>& graphs,
                                 const Tensor& epsilon, const std::function<Tensor(const Tensor&)>& mlp,
                                 const Tensor& bond_embedding) {
  std::vector<std::pair<std::size_t, const std::vector<Bond>*>> parts;
  std::size_t offset = 0;
  for (const auto* g : graphs) {
    parts.emplace_back(offset, &g->bonds());
    offset += g->num_atoms();
  }
  if (node_feats.rank() != 2 || node_feats.dim(0) != offset) {
    throw ad::ShapeError("gin: node features " + ad::shape_str(node_feats.shape()) + " for " + std::to_string(offset) +
                         " atoms");
  }
  return gin_update(node_feats, build_topology(offset, parts), epsilon, mlp, bond_embedding);
}

Tensor graph_readout(const Tensor& node_feats, const std::vector<std::size_t>& graph_sizes, Readout readout) {
  std::vector<CsrMatrix::Triplet> pool;
  std::size_t offset = 0;
  for (std::size_t g = 0; g < graph_sizes.size(); ++g) {
    if (graph_sizes[g] == 0) throw std::invalid_argument("graph_readout: empty graph");
    const double w = readout == Readout::mean ? 1.0 / static_cast<double>(graph_sizes[g]) : 1.0;
    for (std::size_t i = 0; i < graph_sizes[g]; ++i) pool.push_back({g, offset + i, w});
    offset += graph_sizes[g];
  }
  auto m = std::make_shared<const CsrMatrix>(CsrMatrix::from_triplets(graph_sizes.size(), offset, std::move(pool)));
  return ad::spmm(m, node_feats);
}

// ---------------------------------------------------------------------------

GinEncoder::GinEncoder(nn::ParameterStore& store, const std::string& name, GinConfig config)
    : config_(std::move(config)) {
  config_.validate();
  const std::size_t h = config_.hidden_dim;
  atom_embedding_ = store.create(name + ".atom_embedding", {config_.atom_vocab, h}, nn::InitSpec::uniform(1.0));
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    const std::string p = name + ".layers." + std::to_string(l);
    Layer layer;
    layer.epsilon = store.create(p + ".epsilon", {1}, nn::InitSpec::zeros());
    layer.bond_embedding = store.create(p + ".bond_embedding", {4, h}, nn::InitSpec::uniform(0.1));
    layer.fc1 = nn::Linear(store, p + ".mlp.0", h, h);
    layer.fc2 = nn::Linear(store, p + ".mlp.1", h, h);
    layer.norm = nn::LayerNorm(store, p + ".norm", h);
    layers_.push_back(std::move(layer));
  }
}

Tensor GinEncoder::node_embeddings(const std::vector<const MolecularGraph*>& graphs) const {
  std::vector<std::int64_t> ids;
  for (const auto* g : graphs) {
    for (int z : g->atoms()) {
      if (static_cast<std::size_t>(z) >= config_.atom_vocab) {
        throw std::invalid_argument("atomic number " + std::to_string(z) + " outside atom vocabulary");
      }
      ids.push_back(z);
    }
  }
  Tensor h = ad::embedding_lookup(atom_embedding_, ids);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    auto mlp = [&layer](const Tensor& x) { return layer.norm(layer.fc2(ad::relu(layer.fc1(x)))); };
    h = gin_layer_forward_batched(h, graphs, layer.epsilon, mlp, layer.bond_embedding);
    if (l + 1 < layers_.size()) h = ad::relu(h);
  }
  return h;
}

Tensor GinEncoder::encode_batch(const std::vector<const MolecularGraph*>& graphs) const {
  if (graphs.empty()) throw std::invalid_argument("gin: empty batch");
  std::vector<std::size_t> sizes;
  for (const auto* g : graphs) sizes.push_back(g->num_atoms());
  return graph_readout(node_embeddings(graphs), sizes, config_.readout);
}

Tensor GinEncoder::encode(const MolecularGraph& graph) const {
  return ad::reshape(encode_batch({&graph}), {config_.hidden_dim});
}

// ---------------------------------------------------------------------------

McnnEncoder::McnnEncoder(nn::ParameterStore& store, const std::string& name, McnnConfig config)
    : config_(std::move(config)) {
  config_.validate();
  residue_embedding_ = store.create(name + ".residue_embedding", {kProteinAlphabet.size(), config_.embedding_dim},
                                    nn::InitSpec::uniform(1.0));
  for (std::size_t b = 0; b < 3; ++b) {
    std::vector<Conv> convs;
    for (std::size_t l = 0; l < config_.branch_depths[b]; ++l) {
      const std::size_t cin = l == 0 ? config_.embedding_dim : config_.channels;
      const std::string p = name + ".branch" + std::to_string(b) + ".conv" + std::to_string(l);
      Conv c;
      c.weight = store.create(p + ".weight", {config_.channels, cin, config_.kernel_width},
                              nn::InitSpec::kaiming(cin * config_.kernel_width));
      c.bias = store.create(p + ".bias", {config_.channels}, nn::InitSpec::zeros());
      convs.push_back(std::move(c));
    }
    branches_.push_back(std::move(convs));
  }
  projection_ = nn::Linear(store, name + ".projection", 3 * config_.channels, config_.output_dim);
}

Tensor McnnEncoder::embed(const ProteinSequence& seq) const {
  // [L, E] -> [E, L]: embedding channels become conv input channels.
  return ad::transpose(ad::embedding_lookup(residue_embedding_, seq.indices()));
}

std::size_t McnnEncoder::receptive_radius(std::size_t branch) const {
  return branches_.at(branch).size() * (config_.kernel_width / 2);
}

Tensor McnnEncoder::branch_activations(const ProteinSequence& seq, std::size_t branch) const {
  Tensor x = embed(seq);
  for (const auto& conv : branches_.at(branch)) {
    x = ad::relu(ad::conv1d(x, conv.weight, conv.bias, 1, config_.kernel_width / 2));
  }
  return x;
}

Tensor McnnEncoder::branch_features(const ProteinSequence& seq) const {
  Tensor x = embed(seq);
  std::vector<Tensor> pooled;
  for (const auto& convs : branches_) {
    Tensor h = x;
    for (const auto& conv : convs) h = ad::relu(ad::conv1d(h, conv.weight, conv.bias, 1, config_.kernel_width / 2));
    pooled.push_back(ad::reshape(ad::maxpool1d(h), {1, config_.channels}));
  }
  return ad::reshape(ad::concat(pooled, -1), {3 * config_.channels});
}

Tensor McnnEncoder::encode_batch(const std::vector<const ProteinSequence*>& seqs) const {
  if (seqs.empty()) throw std::invalid_argument("mcnn: empty batch");
  std::vector<Tensor> rows;
  rows.reserve(seqs.size());
  for (const auto* s : seqs) rows.push_back(ad::reshape(branch_features(*s), {1, 3 * config_.channels}));
  return projection_(ad::concat(rows, 0));
}

Tensor McnnEncoder::encode(const ProteinSequence& seq) const {
  return ad::reshape(encode_batch({&seq}), {config_.output_dim});
}

}  // namespace kedd::structure
