// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Knowledge-graph embedding: sparse log-ratio factorization by randomized
// truncated SVD, then Chebyshev band-pass propagation over the graph.

#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kedd/tensor.hpp"

namespace kedd::kg {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct Triple {
  std::size_t head = 0;
  std::string relation;
  std::size_t tail = 0;
};

/// Entity ids mapped to dense indices; edges are (head, relation, tail).
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;

  /// Returns the index of `id`, adding it if new.
  std::size_t add_entity(const std::string& id);
  /// Both endpoints must already exist.
  void add_edge(const std::string& head, const std::string& relation, const std::string& tail);
  void add_edge(std::size_t head, const std::string& relation, std::size_t tail);

  std::size_t num_entities() const { return ids_.size(); }
  const std::vector<std::string>& entity_ids() const { return ids_; }
  std::optional<std::size_t> index_of(const std::string& id) const;
  const std::vector<Triple>& edges() const { return edges_; }

  /// Unordered endpoint pairs with weight = multiplicity; relations ignored.
  std::map<std::pair<std::size_t, std::size_t>, double> weighted_pairs() const;
  /// FNV-1a over entity ids and edges in order.
  std::uint64_t hash() const;

  /// Drops every edge whose unordered endpoints are in `pairs`; returns the count removed.
  std::size_t remove_pairs(const std::vector<std::pair<std::size_t, std::size_t>>& pairs);

 private:
  std::vector<std::string> ids_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::vector<Triple> edges_;
};

/// Reads `head<TAB>relation<TAB>tail` lines. If `entity_file` is given, it
/// fixes entity order (first column per line) and unknown endpoints are errors;
/// otherwise entities are added in order of first appearance.
KnowledgeGraph load_kg(const std::filesystem::path& edge_file, const std::filesystem::path* entity_file = nullptr);
void save_kg(const KnowledgeGraph& kg, const std::filesystem::path& edge_file, const std::filesystem::path& entity_file);

struct ProneConfig {
  std::size_t dim = 64;
  double negative_shift = 1.0;   // lambda
  double filter_center = 0.2;    // mu
  double filter_sharpness = 0.5; // theta
  std::size_t chebyshev_order = 10;
  std::size_t tsvd_oversampling = 10;
  std::size_t tsvd_power_iters = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GraphMatrices {
  SparseMatrix adjacency;   // symmetric, isolated nodes carry a unit self-loop
  SparseMatrix transition;  // D^-1 A
  SparseMatrix laplacian;   // I - D^-1/2 A D^-1/2
  Eigen::VectorXd degrees;
};

GraphMatrices build_sparse_matrices(const KnowledgeGraph& kg);

struct TsvdResult {
  Eigen::MatrixXd u;  // n x d
  Eigen::VectorXd s;  // d, descending
  Eigen::MatrixXd v;  // m x d
};

/// Randomized truncated SVD of rank `rank` with `oversampling` extra columns
/// and `power_iters` subspace iterations.
TsvdResult randomized_tsvd(const SparseMatrix& m, std::size_t rank, std::size_t oversampling, std::size_t power_iters,
                           std::uint64_t seed);

/// Sparse log-ratio matrix factorized in stage 1.
SparseMatrix log_ratio_matrix(const GraphMatrices& g, double negative_shift);

struct EmbeddingMatrix {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> values;  // row-major
  bool frozen = false;

  double at(std::size_t r, std::size_t c) const { return values[r * dim + c]; }
  Eigen::MatrixXd to_eigen() const;
  static EmbeddingMatrix from_eigen(const Eigen::MatrixXd& m, bool frozen = false);
  /// Constant tensor [rows, dim] (never requires grad).
  ad::Tensor to_tensor() const;
};

/// Stage 1: R = U_d * sqrt(Sigma_d). When `tsvd` is given it receives the factors.
EmbeddingMatrix factorize_tsvd(const KnowledgeGraph& kg, const ProneConfig& config, TsvdResult* tsvd = nullptr);

/// Chebyshev coefficients of g(lambda) = exp(-0.5 ((lambda - mu)^2 - 1) theta)
/// in the variable x = lambda - 1, from `nodes`-point Chebyshev-Gauss quadrature.
/// Entry 0 is already halved.
std::vector<double> chebyshev_coefficients(const ProneConfig& config, std::size_t nodes = 1024);

/// D^-1 A (sum_k c_k T_k(L - I)) R with no normalization.
Eigen::MatrixXd propagate_raw(const GraphMatrices& g, const Eigen::MatrixXd& base, const std::vector<double>& coeffs);

/// Per-column zero mean, unit population variance (constant columns become 0).
void normalize_columns(Eigen::MatrixXd& m);

/// Stage 2 with the configured band-pass filter, followed by normalization.
EmbeddingMatrix spectral_propagate(const EmbeddingMatrix& base, const KnowledgeGraph& kg, const ProneConfig& config);

/// Stage 1 then stage 2; result is frozen.
EmbeddingMatrix embed_graph(const KnowledgeGraph& kg, const ProneConfig& config);

/// Binary matrix file plus `<path>.manifest.json` and `<path>.ids`.
void save_embedding(const std::filesystem::path& path, const EmbeddingMatrix& e, const std::vector<std::string>& ids,
                    const ProneConfig& config, std::uint64_t graph_hash);
EmbeddingMatrix load_embedding(const std::filesystem::path& path, std::vector<std::string>* ids = nullptr);

}  // namespace kedd::kg
