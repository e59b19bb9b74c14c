// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Molecular-structure encoders: a GIN over 2D molecular graphs and a
// three-branch CNN over protein sequences.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "kedd/nn.hpp"

namespace kedd::structure {

using ad::Tensor;

struct Bond {
  std::size_t a = 0;
  std::size_t b = 0;
  int order = 1;  // 1, 2, 3, or 4 (aromatic)

  bool operator==(const Bond&) const = default;
};

/// Undirected 2D molecular graph with at least one atom.
class MolecularGraph {
 public:
  /// Validates indices, rejects self loops and bad orders, and collapses
  /// duplicate bonds (the first occurrence wins).
  MolecularGraph(std::vector<int> atomic_numbers, std::vector<Bond> bonds);

  const std::vector<int>& atoms() const { return atoms_; }
  const std::vector<Bond>& bonds() const { return bonds_; }
  std::size_t num_atoms() const { return atoms_.size(); }
  std::size_t duplicates_removed() const { return duplicates_removed_; }

  /// Relabels atoms: new index of old atom i is perm[i].
  MolecularGraph permuted(const std::vector<std::size_t>& perm) const;

 private:
  std::vector<int> atoms_;
  std::vector<Bond> bonds_;
  std::size_t duplicates_removed_ = 0;
};

constexpr std::string_view kProteinAlphabet = "ACDEFGHIKLMNPQRSTVWYBXZUO";

class ProteinSequence {
 public:
  /// Throws std::invalid_argument naming the first offending position.
  /// Sequences longer than max_len are cut from the right.
  explicit ProteinSequence(std::string residues, std::size_t max_len = 1024);

  const std::string& residues() const { return residues_; }
  std::size_t length() const { return residues_.size(); }
  bool truncated() const { return truncated_; }
  /// Residue indices into kProteinAlphabet.
  std::vector<std::int64_t> indices() const;

 private:
  std::string residues_;
  bool truncated_ = false;
};

enum class Readout { mean, sum };

struct GinConfig {
  std::size_t num_layers = 5;
  std::size_t hidden_dim = 128;
  Readout readout = Readout::mean;
  std::size_t atom_vocab = 119;

  void validate() const;
};

struct McnnConfig {
  std::vector<std::size_t> branch_depths = {2, 4, 6};
  std::size_t channels = 64;
  std::size_t kernel_width = 7;
  std::size_t embedding_dim = 32;
  std::size_t output_dim = 128;
  std::size_t max_len = 1024;

  void validate() const;
};

/// One GIN update: MLP((1 + eps) h_v + sum_{u in N(v)} (h_u + e_uv)).
/// `bond_embedding` is an optional [4, d] table of per-order message terms.
Tensor gin_layer_forward(const Tensor& node_feats, const std::vector<Bond>& edges, const Tensor& epsilon,
                         const std::function<Tensor(const Tensor&)>& mlp, const Tensor& bond_embedding = {});

/// Same as gin_layer_forward over several disjoint graphs stacked row-wise.
Tensor gin_layer_forward_batched(const Tensor& node_feats, const std::vector<const MolecularGraph*>& graphs,
                                 const Tensor& epsilon, const std::function<Tensor(const Tensor&)>& mlp,
                                 const Tensor& bond_embedding = {});

/// Pools node rows [N_total, d] into one row per graph.
Tensor graph_readout(const Tensor& node_feats, const std::vector<std::size_t>& graph_sizes, Readout readout);

class GinEncoder {
 public:
  GinEncoder(nn::ParameterStore& store, const std::string& name, GinConfig config);

  /// [hidden_dim] feature of one molecule.
  Tensor encode(const MolecularGraph& graph) const;
  /// [B, hidden_dim], one row per graph.
  Tensor encode_batch(const std::vector<const MolecularGraph*>& graphs) const;
  /// Final-layer node embeddings [N_total, hidden_dim] before readout.
  Tensor node_embeddings(const std::vector<const MolecularGraph*>& graphs) const;

  const GinConfig& config() const { return config_; }

 private:
  struct Layer {
    Tensor epsilon;
    Tensor bond_embedding;
    nn::Linear fc1;
    nn::Linear fc2;
    nn::LayerNorm norm;
  };
  GinConfig config_;
  Tensor atom_embedding_;
  std::vector<Layer> layers_;
};

class McnnEncoder {
 public:
  McnnEncoder(nn::ParameterStore& store, const std::string& name, McnnConfig config);

  /// [output_dim] feature of one protein.
  Tensor encode(const ProteinSequence& seq) const;
  Tensor encode_batch(const std::vector<const ProteinSequence*>& seqs) const;
  /// Concatenated max-pooled branch outputs [3 * channels], before projection.
  Tensor branch_features(const ProteinSequence& seq) const;
  /// Last conv activations [channels, L] of one branch, before pooling.
  Tensor branch_activations(const ProteinSequence& seq, std::size_t branch) const;
  /// Positions on either side that influence one output position of a branch.
  std::size_t receptive_radius(std::size_t branch) const;

  const McnnConfig& config() const { return config_; }

 private:
  struct Conv {
    Tensor weight;
    Tensor bias;
  };
  Tensor embed(const ProteinSequence& seq) const;

  McnnConfig config_;
  Tensor residue_embedding_;
  std::vector<std::vector<Conv>> branches_;
  nn::Linear projection_;
};

}  // namespace kedd::structure
