// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>
#include <random>

#include "kedd/grad_check.hpp"
#include "kedd/structure.hpp"

using namespace kedd;
using namespace kedd::structure;
using ad::Tensor;

namespace {

Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m(i, j) = t.at({i, j});
  return m;
}

Tensor random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  std::normal_distribution<double> n;
  std::vector<double> v(r * c);
  for (auto& x : v) x = n(rng);
  return Tensor::from({r, c}, v);
}

// Random connected molecule: a spanning tree plus a few extra bonds.
MolecularGraph random_molecule(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> elem(0, 3);
  const int elements[] = {6, 7, 8, 16};
  std::vector<int> atoms(n);
  for (auto& a : atoms) a = elements[elem(rng)];
  std::vector<Bond> bonds;
  std::uniform_int_distribution<int> order(1, 4);
  for (std::size_t i = 1; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> parent(0, i - 1);
    bonds.push_back({parent(rng), i, order(rng)});
  }
  std::uniform_int_distribution<std::size_t> any(0, n - 1);
  for (int k = 0; k < 3 && n > 2; ++k) {
    auto a = any(rng), b = any(rng);
    if (a != b) bonds.push_back({a, b, 1});
  }
  return MolecularGraph(atoms, bonds);
}

GinConfig small_gin() {
  GinConfig c;
  c.num_layers = 3;
  c.hidden_dim = 8;
  return c;
}

McnnConfig small_mcnn() {
  McnnConfig c;
  c.branch_depths = {1, 2, 3};
  c.channels = 4;
  c.kernel_width = 3;
  c.embedding_dim = 5;
  c.output_dim = 6;
  return c;
}

}  // namespace

TEST(MolecularGraph, ValidatesAndDeduplicates) {
  MolecularGraph g({6, 6, 8}, {{0, 1, 1}, {1, 0, 2}, {1, 2, 1}});
  EXPECT_EQ(g.bonds().size(), 2u);
  EXPECT_EQ(g.duplicates_removed(), 1u);
  EXPECT_THROW(MolecularGraph({}, {}), std::invalid_argument);
  EXPECT_THROW(MolecularGraph({6}, {{0, 0, 1}}), std::invalid_argument);
  EXPECT_THROW(MolecularGraph({6, 6}, {{0, 2, 1}}), std::invalid_argument);
  EXPECT_THROW(MolecularGraph({6, 6}, {{0, 1, 5}}), std::invalid_argument);
}

TEST(ProteinSequence, RejectsForeignResiduesWithPosition) {
  try {
    ProteinSequence("MKJV");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("position 2"), std::string::npos);
  }
  ProteinSequence long_seq(std::string(1500, 'A'), 1024);
  EXPECT_EQ(long_seq.length(), 1024u);
  EXPECT_TRUE(long_seq.truncated());
}

TEST(GinLayer, MatchesDenseAdjacencyOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    auto g = random_molecule(rng, 2 + trial);
    const std::size_t n = g.num_atoms(), d = 5;
    Tensor h = random_matrix(rng, n, d);
    Tensor bond = random_matrix(rng, 4, d);
    const double eps = 0.1 * trial - 0.3;
    Tensor out = gin_layer_forward(h, g.bonds(), Tensor::from({1}, {eps}), [](const Tensor& x) { return x; }, bond);

    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n), C = Eigen::MatrixXd::Zero(n, 4);
    for (const auto& b : g.bonds()) {
      A(b.a, b.b) = A(b.b, b.a) = 1.0;
      C(b.a, b.order - 1) += 1.0;
      C(b.b, b.order - 1) += 1.0;
    }
    Eigen::MatrixXd H = to_eigen(h);
    Eigen::MatrixXd expected = (1.0 + eps) * H + A * H + C * to_eigen(bond);
    EXPECT_LT((to_eigen(out) - expected).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(GinLayer, EdgeOutOfRangeRaises) {
  Tensor h = Tensor::zeros({2, 3});
  EXPECT_THROW(gin_layer_forward(h, {{0, 2, 1}}, Tensor::from({1}, {0.0}), [](const Tensor& x) { return x; }),
               std::out_of_range);
}

TEST(GinLayer, SingleAtomIdentityLayersReturnEmbedding) {
  std::mt19937_64 rng(4);
  Tensor h = random_matrix(rng, 1, 6);
  Tensor x = h;
  for (int l = 0; l < 5; ++l) x = gin_layer_forward(x, {}, Tensor::from({1}, {0.0}), [](const Tensor& t) { return t; });
  Tensor pooled = graph_readout(x, {1}, Readout::mean);
  for (std::size_t j = 0; j < 6; ++j) EXPECT_DOUBLE_EQ(pooled.at({0, j}), h.at({0, j}));
}

TEST(GinEncoder, OutputShapeAndBatchConsistency) {
  nn::ParameterStore store(1);
  GinEncoder gin(store, "gin", small_gin());
  std::mt19937_64 rng(5);
  auto g1 = random_molecule(rng, 7), g2 = random_molecule(rng, 4);
  Tensor batch = gin.encode_batch({&g1, &g2});
  ASSERT_EQ(batch.shape(), (ad::Shape{2, 8}));
  Tensor single = gin.encode(g2);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(batch.at({1, j}), single.at({j}), 1e-12);
}

TEST(GinEncoder, PermutationInvariant) {
  nn::ParameterStore store(2);
  GinEncoder gin(store, "gin", small_gin());
  std::mt19937_64 rng(6);
  auto g = random_molecule(rng, 9);
  Tensor ref = gin.encode(g);
  std::vector<std::size_t> perm(g.num_atoms());
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 100; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor out = gin.encode(g.permuted(perm));
    for (std::size_t j = 0; j < ref.numel(); ++j) ASSERT_NEAR(out.at({j}), ref.at({j}), 1e-9);
  }
}

TEST(GinEncoder, SymmetricCycleGivesIdenticalNodes) {
  nn::ParameterStore store(3);
  GinEncoder gin(store, "gin", small_gin());
  MolecularGraph ring({6, 6, 6, 6}, {{0, 1, 1}, {1, 2, 1}, {2, 3, 1}, {3, 0, 1}});
  Tensor nodes = gin.node_embeddings({&ring});
  for (std::size_t i = 1; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(nodes.at({i, j}), nodes.at({0, j}));
}

TEST(GinEncoder, SumReadoutScalesWithSize) {
  nn::ParameterStore s1(9), s2(9);
  auto cm = small_gin();
  auto cs = cm;
  cs.readout = Readout::sum;
  GinEncoder mean_enc(s1, "gin", cm), sum_enc(s2, "gin", cs);
  std::mt19937_64 rng(8);
  auto g = random_molecule(rng, 6);
  Tensor m = mean_enc.encode(g), s = sum_enc.encode(g);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(s.at({j}), 6.0 * m.at({j}), 1e-10);
}

TEST(GinEncoder, GradientsMatchFiniteDifferences) {
  nn::ParameterStore store(4);
  auto cfg = small_gin();
  cfg.num_layers = 2;
  cfg.hidden_dim = 3;
  GinEncoder gin(store, "gin", cfg);
  std::mt19937_64 rng(10);
  auto g = random_molecule(rng, 4);
  std::vector<Tensor> params;
  for (const auto& p : store.parameters())
    if (p.name.find("atom_embedding") == std::string::npos) params.push_back(p.tensor);
  auto report = ad::grad_check_params(
      [&] {
        Tensor y = gin.encode(g);
        return ad::sum(ad::mul(y, Tensor::from({3}, {0.3, -1.1, 0.7})));
      },
      params, 1e-6, 1e-4);
  EXPECT_TRUE(report.passed) << "max rel err " << report.max_relative_error << " at " << report.worst_index;
}

TEST(Mcnn, OutputShapeAcrossLengths) {
  nn::ParameterStore store(5);
  McnnEncoder enc(store, "mcnn", small_mcnn());
  std::mt19937_64 rng(11);
  for (std::size_t len : {1u, 7u, 512u}) {
    std::string s(len, 'A');
    for (auto& c : s) c = kProteinAlphabet[rng() % 20];
    Tensor out = enc.encode(ProteinSequence(s));
    EXPECT_EQ(out.shape(), (ad::Shape{6}));
  }
}

TEST(Mcnn, ConstantSequenceIsTranslationInvariant) {
  nn::ParameterStore store(6);
  McnnEncoder enc(store, "mcnn", small_mcnn());
  Tensor a = enc.branch_features(ProteinSequence(std::string(50, 'A')));
  Tensor b = enc.branch_features(ProteinSequence(std::string(80, 'A')));
  for (std::size_t j = 0; j < a.numel(); ++j) EXPECT_EQ(a.at({j}), b.at({j}));
}

TEST(Mcnn, AppendingBeyondReceptiveFieldKeepsMotifResponse) {
  nn::ParameterStore store(7);
  McnnEncoder enc(store, "mcnn", small_mcnn());
  const std::string base = "MKWVTFISLLLLFSSAYSRGV";
  const std::string longer = base + "DEDEDEKKKRRRHHHPPPGGG";
  for (std::size_t br = 0; br < 3; ++br) {
    const std::size_t r = enc.receptive_radius(br);
    Tensor a = enc.branch_activations(ProteinSequence(base), br);
    Tensor b = enc.branch_activations(ProteinSequence(longer), br);
    ASSERT_EQ(b.dim(1), longer.size());
    const std::size_t stable = base.size() - r;  // positions [0, stable) never see the tail
    for (std::size_t c = 0; c < a.dim(0); ++c) {
      double ma = -1e300, mb = -1e300;
      for (std::size_t p = 0; p < stable; ++p) {
        EXPECT_EQ(a.at({c, p}), b.at({c, p}));
        ma = std::max(ma, a.at({c, p}));
        mb = std::max(mb, b.at({c, p}));
      }
      EXPECT_EQ(ma, mb);
    }
  }
}

TEST(Mcnn, BatchMatchesSingle) {
  nn::ParameterStore store(8);
  McnnEncoder enc(store, "mcnn", small_mcnn());
  ProteinSequence p1("MKTAYIAKQR"), p2("GAVLI");
  Tensor batch = enc.encode_batch({&p1, &p2});
  Tensor single = enc.encode(p2);
  for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(batch.at({1, j}), single.at({j}), 1e-12);
}

TEST(Mcnn, RejectsBadConfig) {
  nn::ParameterStore store(9);
  auto c = small_mcnn();
  c.branch_depths = {2, 2, 3};
  EXPECT_THROW(McnnEncoder(store, "m", c), std::invalid_argument);
  c = small_mcnn();
  c.kernel_width = 4;
  EXPECT_THROW(McnnEncoder(store, "m2", c), std::invalid_argument);
}

TEST(GinLayer, TrivialExamples) {
  auto id = [](const Tensor& x) { return x; };
  Tensor eps = Tensor::from({1}, {0.0});
  EXPECT_EQ(gin_layer_forward(Tensor::from({1, 1}, {1.0}), {}, eps, id).at({0, 0}), 1.0);
  Tensor two = gin_layer_forward(Tensor::from({2, 1}, {1.0, 2.0}), {{0, 1, 1}}, eps, id);
  EXPECT_EQ(two.at({0, 0}), 3.0);
  EXPECT_EQ(two.at({1, 0}), 3.0);
}
