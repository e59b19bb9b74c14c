// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "kedd/kg.hpp"

using namespace kedd::kg;

namespace {

KnowledgeGraph make_graph(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                          const std::string& rel = "r") {
  KnowledgeGraph kg;
  for (std::size_t i = 0; i < n; ++i) kg.add_entity("e" + std::to_string(i));
  for (auto [a, b] : edges) kg.add_edge(a, rel, b);
  return kg;
}

KnowledgeGraph random_graph(std::mt19937_64& rng, std::size_t n, double p) {
  std::bernoulli_distribution coin(p);
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (coin(rng)) edges.emplace_back(i, j);
  for (std::size_t i = 1; i < n; ++i) edges.emplace_back(i - 1, i);  // keep it connected
  return make_graph(n, edges);
}

// Dense oracle for A, with the same self-loop rule for isolated nodes.
Eigen::MatrixXd dense_adjacency(const KnowledgeGraph& kg) {
  const auto n = static_cast<Eigen::Index>(kg.num_entities());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (const auto& e : kg.edges()) {
    a(e.head, e.tail) += 1.0;
    if (e.head != e.tail) a(e.tail, e.head) += 1.0;
  }
  for (Eigen::Index i = 0; i < n; ++i)
    if (a.row(i).sum() == 0.0) a(i, i) = 1.0;
  return a;
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return a.dot(b) / (a.norm() * b.norm()); }

}  // namespace

TEST(SparseMatrices, TwoNodeTransition) {
  auto g = build_sparse_matrices(make_graph(2, {{0, 1}}));
  Eigen::MatrixXd p = Eigen::MatrixXd(g.transition);
  EXPECT_EQ(p(0, 0), 0.0);
  EXPECT_EQ(p(0, 1), 1.0);
  EXPECT_EQ(p(1, 0), 1.0);
  EXPECT_EQ(p(1, 1), 0.0);
}

TEST(SparseMatrices, TriangleRowsAreHalves) {
  auto g = build_sparse_matrices(make_graph(3, {{0, 1}, {1, 2}, {2, 0}}));
  Eigen::MatrixXd p = Eigen::MatrixXd(g.transition);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(p(i, j), i == j ? 0.0 : 0.5);
}

TEST(SparseMatrices, LaplacianSpectrumInUnitBand) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    auto kg = random_graph(rng, 8, 0.3);
    auto g = build_sparse_matrices(kg);
    Eigen::MatrixXd l = Eigen::MatrixXd(g.laplacian);
    EXPECT_LT((l - l.transpose()).cwiseAbs().maxCoeff(), 1e-14);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(l);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
    EXPECT_LE(es.eigenvalues().maxCoeff(), 2.0 + 1e-12);
    EXPECT_NEAR(es.eigenvalues().minCoeff(), 0.0, 1e-12);
    Eigen::MatrixXd p = Eigen::MatrixXd(g.transition);
    for (int i = 0; i < 8; ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-14);
  }
}

TEST(SparseMatrices, MultiplicityAndIsolatedNodes) {
  KnowledgeGraph kg = make_graph(3, {});
  kg.add_edge(0, "treats", 1);
  kg.add_edge(1, "binds", 0);
  auto g = build_sparse_matrices(kg);
  Eigen::MatrixXd a = Eigen::MatrixXd(g.adjacency);
  EXPECT_EQ(a(0, 1), 2.0);
  EXPECT_EQ(a(2, 2), 1.0);
  EXPECT_EQ(g.degrees[2], 1.0);
  EXPECT_THROW(build_sparse_matrices(KnowledgeGraph()), std::invalid_argument);
}

TEST(Tsvd, FullRankIsExact) {
  auto kg = make_graph(4, {{0, 1}, {1, 2}, {2, 3}, {0, 2}});
  auto g = build_sparse_matrices(kg);
  auto m = log_ratio_matrix(g, 1.0);
  auto r = randomized_tsvd(m, 4, 10, 5, 7);
  Eigen::MatrixXd rebuilt = r.u * r.s.asDiagonal() * r.v.transpose();
  EXPECT_LT((Eigen::MatrixXd(m) - rebuilt).norm(), 1e-8);
}

TEST(Tsvd, LogRatioMatchesDenseFormula) {
  std::mt19937_64 rng(2);
  auto kg = random_graph(rng, 7, 0.4);
  auto g = build_sparse_matrices(kg);
  Eigen::MatrixXd m = Eigen::MatrixXd(log_ratio_matrix(g, 1.5));
  Eigen::MatrixXd a = dense_adjacency(kg);
  Eigen::VectorXd d = a.rowwise().sum();
  const double total = d.sum();
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) {
      const double expect = a(i, j) > 0 ? std::max(0.0, std::log(a(i, j) / d(i)) - std::log(1.5 * d(j) / total)) : 0.0;
      EXPECT_NEAR(m(i, j), expect, 1e-12);
    }
}

TEST(Tsvd, RankTwoMatchesBestApproximation) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd x(6, 2), y(6, 2);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 2; ++j) {
        x(i, j) = u(rng);
        y(i, j) = u(rng);
      }
    Eigen::MatrixXd dense = x * y.transpose();
    SparseMatrix m = dense.sparseView();
    auto r = randomized_tsvd(m, 2, 1, 2, 100 + trial);
    const double err = (dense - r.u * r.s.asDiagonal() * r.v.transpose()).norm();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(dense);
    const auto sv = svd.singularValues();
    const double best = sv.tail(4).norm();
    EXPECT_LE(err, best + 1e-6);
  }
}

TEST(Tsvd, NoisyMatrixCloseToBestRankK) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd dense(30, 30);
  for (int i = 0; i < 30; ++i)
    for (int j = 0; j < 30; ++j) dense(i, j) = u(rng) * u(rng);
  SparseMatrix m = dense.sparseView();
  auto r = randomized_tsvd(m, 5, 10, 5, 9);
  const double err = (dense - r.u * r.s.asDiagonal() * r.v.transpose()).norm();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(dense);
  const double best = svd.singularValues().tail(25).norm();
  EXPECT_LE(err, best * (1.0 + 1e-6));
}

TEST(Factorize, IsomorphicComponentsShareRowNorms) {
  // A 5-node path-plus-chord, twice, with the second copy relabeled.
  std::vector<std::pair<std::size_t, std::size_t>> base{{0, 1}, {1, 2}, {2, 3}, {3, 4}, {1, 3}};
  const std::size_t relabel[5] = {3, 0, 4, 1, 2};
  auto edges = base;
  for (auto [a, b] : base) edges.emplace_back(5 + relabel[a], 5 + relabel[b]);
  auto kg = make_graph(10, edges);
  ProneConfig cfg;
  cfg.dim = 4;
  auto r = factorize_tsvd(kg, cfg);
  auto m = r.to_eigen();
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(m.row(i).norm(), m.row(5 + relabel[i]).norm(), 1e-6);
}

TEST(Factorize, RejectsDimAboveEntityCount) {
  ProneConfig cfg;
  cfg.dim = 5;
  EXPECT_THROW(factorize_tsvd(make_graph(4, {{0, 1}}), cfg), std::invalid_argument);
}

TEST(Propagate, IdentityFilterIsNeighborAveraging) {
  auto g = build_sparse_matrices(make_graph(2, {{0, 1}}));
  Eigen::MatrixXd r(2, 1);
  r << 1, 2;
  Eigen::MatrixXd out = propagate_raw(g, r, {1.0});
  EXPECT_DOUBLE_EQ(out(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(out(1, 0), 1.0);
}

TEST(Propagate, ChebyshevMatchesDenseSpectralFilter) {
  std::mt19937_64 rng(5);
  ProneConfig cfg;
  auto kg = random_graph(rng, 8, 0.35);
  auto g = build_sparse_matrices(kg);
  std::normal_distribution<double> n;
  Eigen::MatrixXd r(8, 3);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 3; ++j) r(i, j) = n(rng);

  Eigen::MatrixXd a = dense_adjacency(kg);
  Eigen::VectorXd d = a.rowwise().sum();
  Eigen::MatrixXd dis = d.cwiseSqrt().cwiseInverse().asDiagonal();
  Eigen::MatrixXd lap = Eigen::MatrixXd::Identity(8, 8) - dis * a * dis;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lap);
  Eigen::VectorXd gl(8);
  for (int i = 0; i < 8; ++i) {
    const double lam = es.eigenvalues()[i];
    gl[i] = std::exp(-0.5 * ((lam - cfg.filter_center) * (lam - cfg.filter_center) - 1.0) * cfg.filter_sharpness);
  }
  Eigen::MatrixXd filt = es.eigenvectors() * gl.asDiagonal() * es.eigenvectors().transpose();
  Eigen::MatrixXd dense = d.cwiseInverse().asDiagonal() * a * filt * r;

  Eigen::MatrixXd cheb = propagate_raw(g, r, chebyshev_coefficients(cfg));
  EXPECT_LT((dense - cheb).norm() / dense.norm(), 1e-3);
}

TEST(Propagate, PermutationEquivariant) {
  std::mt19937_64 rng(6);
  ProneConfig cfg;
  cfg.dim = 3;
  auto kg = random_graph(rng, 9, 0.3);
  auto base = factorize_tsvd(kg, cfg);
  std::vector<std::size_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  KnowledgeGraph pk = make_graph(9, {});
  for (const auto& e : kg.edges()) pk.add_edge(perm[e.head], e.relation, perm[e.tail]);
  EmbeddingMatrix pbase = base;
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t c = 0; c < 3; ++c) pbase.values[perm[i] * 3 + c] = base.at(i, c);
  auto out = spectral_propagate(base, kg, cfg);
  auto pout = spectral_propagate(pbase, pk, cfg);
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(pout.at(perm[i], c), out.at(i, c), 1e-10);
}

class EmbedGraph : public ::testing::Test {
 protected:
  // Two dense communities joined by a handful of bridges.
  static KnowledgeGraph two_clusters(std::uint64_t seed, std::size_t half = 60) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution in(0.2), out(0.005);
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t i = 0; i < 2 * half; ++i)
      for (std::size_t j = i + 1; j < 2 * half; ++j)
        if ((i < half) == (j < half) ? in(rng) : out(rng)) edges.emplace_back(i, j);
    return make_graph(2 * half, edges);
  }
};

TEST_F(EmbedGraph, ShapeDeterminismAndFreeze) {
  auto kg = two_clusters(1);
  ProneConfig cfg;
  cfg.seed = 11;
  auto a = embed_graph(kg, cfg);
  auto b = embed_graph(kg, cfg);
  EXPECT_EQ(a.rows, 120u);
  EXPECT_EQ(a.dim, 64u);
  EXPECT_TRUE(a.frozen);
  EXPECT_EQ(a.values, b.values);
  EXPECT_FALSE(a.to_tensor().requires_grad());
}

TEST_F(EmbedGraph, FiniteWithUnitScaleColumns) {
  auto e = embed_graph(two_clusters(2), ProneConfig{}).to_eigen();
  EXPECT_TRUE(e.allFinite());
  for (Eigen::Index c = 0; c < e.cols(); ++c) {
    const double mean = e.col(c).mean();
    const double var = (e.col(c).array() - mean).square().mean();
    EXPECT_NEAR(mean, 0.0, 1e-10);
    EXPECT_GE(var, 0.5);
    EXPECT_LE(var, 2.0);
  }
}

TEST_F(EmbedGraph, ClustersAreSeparated) {
  auto e = embed_graph(two_clusters(3), ProneConfig{}).to_eigen();
  double intra = 0, inter = 0;
  std::size_t ni = 0, nx = 0;
  for (Eigen::Index i = 0; i < e.rows(); ++i)
    for (Eigen::Index j = i + 1; j < e.rows(); ++j) {
      const double c = cosine(e.row(i), e.row(j));
      if ((i < 60) == (j < 60)) {
        intra += c;
        ++ni;
      } else {
        inter += c;
        ++nx;
      }
    }
  EXPECT_GT(intra / static_cast<double>(ni), inter / static_cast<double>(nx));
}

TEST_F(EmbedGraph, RelationLabelsDoNotMatter) {
  auto kg = two_clusters(4);
  KnowledgeGraph shuffled = make_graph(kg.num_entities(), {});
  std::mt19937_64 rng(5);
  const char* rels[] = {"treats", "binds", "interacts", "causes"};
  for (const auto& e : kg.edges()) shuffled.add_edge(e.head, rels[rng() % 4], e.tail);
  ProneConfig cfg;
  cfg.dim = 16;
  EXPECT_EQ(embed_graph(kg, cfg).values, embed_graph(shuffled, cfg).values);
}

TEST_F(EmbedGraph, RemovingAnEdgeChangesEmbedding) {
  auto kg = two_clusters(6);
  ProneConfig cfg;
  cfg.dim = 16;
  auto before = embed_graph(kg, cfg);
  const auto e0 = kg.edges().front();
  ASSERT_EQ(kg.remove_pairs({{e0.head, e0.tail}}), 1u);
  auto after = embed_graph(kg, cfg);
  EXPECT_NE(before.values, after.values);
}

TEST(EmbeddingFiles, BinaryRoundTripAndManifest) {
  auto dir = std::filesystem::temp_directory_path() / "kedd_kg_test";
  std::filesystem::remove_all(dir);
  auto kg = make_graph(5, {{0, 1}, {1, 2}, {3, 4}});
  ProneConfig cfg;
  cfg.dim = 2;
  cfg.seed = 3;
  auto e = embed_graph(kg, cfg);
  save_embedding(dir / "E.bin", e, kg.entity_ids(), cfg, kg.hash());
  std::vector<std::string> ids;
  auto back = load_embedding(dir / "E.bin", &ids);
  EXPECT_EQ(back.values, e.values);
  EXPECT_EQ(ids, kg.entity_ids());
  std::ifstream raw(dir / "E.bin", std::ios::binary);
  char magic[8];
  raw.read(magic, 8);
  EXPECT_EQ(std::string(magic, 8), "KEDDEMB1");
  EXPECT_TRUE(std::filesystem::exists(dir / "E.bin.manifest.json"));
  std::filesystem::remove_all(dir);
}

TEST(KgFiles, TsvRoundTripAndDanglingEndpoint) {
  auto dir = std::filesystem::temp_directory_path() / "kedd_kg_tsv";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  KnowledgeGraph kg;
  for (auto id : {"DB001", "P12345", "GO:0001"}) kg.add_entity(id);
  kg.add_edge("DB001", "targets", "P12345");
  kg.add_edge("P12345", "annotated", "GO:0001");
  save_kg(kg, dir / "edges.tsv", dir / "entities.txt");
  auto ents = dir / "entities.txt";
  auto back = load_kg(dir / "edges.tsv", &ents);
  EXPECT_EQ(back.entity_ids(), kg.entity_ids());
  EXPECT_EQ(back.hash(), kg.hash());
  {
    std::ofstream out(dir / "bad.tsv");
    out << "DB001\ttargets\tP99999\n";
  }
  EXPECT_THROW(load_kg(dir / "bad.tsv", &ents), std::runtime_error);
  std::filesystem::remove_all(dir);
}
