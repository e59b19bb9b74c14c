// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "kedd/experiment.hpp"
#include "kedd/train.hpp"

using namespace kedd;
using namespace kedd::train;

namespace {

std::vector<std::uint8_t> bits(std::initializer_list<int> v) { return {v.begin(), v.end()}; }

// Concordant-pair counting, rounded with the same complement-symmetric rule.
double brute_auroc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] && !y[j]) {
        den += 1;
        num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return num >= den / 2 ? num / den : 1.0 - (den - num) / den;
}

// Precision at every positive, with tied scores sharing the group's precision.
double brute_auprc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double pos = 0, ap = 0;
  for (auto v : y) pos += v;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    double tp = 0, all = 0;
    for (std::size_t j = 0; j < s.size(); ++j)
      if (s[j] >= s[i]) {
        all += 1;
        tp += y[j];
      }
    ap += tp / all;
  }
  return ap / pos;
}

data::SyntheticConfig tiny_world(std::uint64_t seed = 0) {
  data::SyntheticConfig w;
  w.drugs = 24;
  w.proteins = 16;
  w.samples = 160;
  w.latent_dim = 4;
  w.protein_length = 20;
  w.kg_degree = 4;
  w.missing_sk = 0.25;
  w.seed = seed;
  return w;
}

experiment::RunConfig tiny_run(std::uint64_t seed = 0) {
  experiment::RunConfig c;
  c.seed = seed;
  c.prone.dim = 8;
  c.model.gin.num_layers = 2;
  c.model.gin.hidden_dim = 12;
  c.model.mcnn.branch_depths = {1, 2, 3};
  c.model.mcnn.channels = 6;
  c.model.mcnn.kernel_width = 3;
  c.model.mcnn.embedding_dim = 6;
  c.model.mcnn.output_dim = 12;
  c.model.text.layers = 1;
  c.model.text.heads = 2;
  c.model.text.model_dim = 8;
  c.model.text.ff_dim = 16;
  c.model.text.max_tokens = 24;
  c.model.attention.heads = 2;
  c.model.attention.k = 4;
  c.model.sk_dim = 8;
  c.model.uk_dim = 8;
  c.model.fusion_hidden = {16};
  c.train.learning_rate = 1e-3;
  c.train.batch_size = 16;
  c.train.max_epochs = 3;
  c.train.patience = 3;
  return c;
}

struct Fixture {
  data::World world;
  experiment::RunConfig config;
  experiment::Prepared prepared;

  Fixture(const data::SyntheticConfig& w, experiment::RunConfig c)
      : world(data::gen_synthetic(w)), config(std::move(c)),
        prepared(experiment::prepare(world.entities, world.kg, world.samples, config)) {}
};

}  // namespace

TEST(BceLoss, AnalyticValues) {
  EXPECT_NEAR(bce_loss(Tensor::from({1, 1}, {0.0}), {bits({1})}, 1).item(), std::log(2.0), 1e-15);
  EXPECT_LT(bce_loss(Tensor::from({1, 1}, {20.0}), {bits({1})}, 1).item(), 1e-8);
  EXPECT_GT(bce_loss(Tensor::from({1, 1}, {20.0}), {bits({1})}, 1).item(), 0.0);
  EXPECT_NEAR(bce_loss(Tensor::from({1, 2}, {0.0, 0.0}), {bits({1, 0})}, 2).item(), std::log(2.0), 1e-15);
  EXPECT_TRUE(std::isfinite(bce_loss(Tensor::from({1, 1}, {-800.0}), {bits({1})}, 1).item()));
}

TEST(BceLoss, RejectsBadLabelsAndShapes) {
  EXPECT_THROW(bce_loss(Tensor::from({1, 1}, {0.0}), {bits({2})}, 1), std::invalid_argument);
  EXPECT_THROW(bce_loss(Tensor::from({1, 2}, {0.0, 0.0}), {bits({1})}, 1), std::invalid_argument);
  EXPECT_THROW(bce_loss(Tensor::from({1, 2}, {0.0, 0.0}), {bits({1, 0, 1})}, 2), std::invalid_argument);
}

TEST(Auroc, WorkedExamples) {
  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
  const auto y = bits({0, 0, 1, 1});
  EXPECT_EQ(auroc(s, y), 0.75);
  EXPECT_EQ(auroc(s, y), brute_auroc(s, y));
  EXPECT_EQ(auroc(std::vector<double>{0.1, 0.2, 0.9}, bits({0, 0, 1})), 1.0);
  EXPECT_EQ(auroc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, bits({0, 1, 0, 1})), 0.5);
  EXPECT_THROW(auroc(std::vector<double>{0.1, 0.2}, bits({1, 1})), std::invalid_argument);
  EXPECT_THROW(auroc(std::vector<double>{0.1}, bits({1, 0})), std::invalid_argument);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(auroc(std::vector<double>{0.1, nan}, bits({1, 0})), std::invalid_argument);
  EXPECT_THROW(auprc(std::vector<double>{nan, 0.2}, bits({1, 0})), std::invalid_argument);
}

TEST(Auroc, ComplementIdentityIsExact) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> level(0, 9);
  for (int t = 0; t < 2000; ++t) {
    const std::size_t n = 2 + rng() % 40;
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n), flipped(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = level(rng) / 10.0;  // coarse levels force ties
      y[i] = rng() % 2;
    }
    y[0] = 1;
    y[1] = 0;
    for (std::size_t i = 0; i < n; ++i) flipped[i] = 1 - y[i];
    EXPECT_EQ(auroc(s, flipped), 1.0 - auroc(s, y));
  }
}

TEST(Auprc, WorkedExamples) {
  EXPECT_EQ(auprc(std::vector<double>{0.9, 0.1}, bits({1, 0})), 1.0);
  EXPECT_EQ(auprc(std::vector<double>{0.9, 0.1}, bits({0, 1})), 0.5);
  EXPECT_EQ(auprc(std::vector<double>{0.9, 0.1}, bits({0, 1})), brute_auprc({0.9, 0.1}, bits({0, 1})));
  EXPECT_THROW(auprc(std::vector<double>{0.9, 0.1}, bits({0, 0})), std::invalid_argument);
}

TEST(Auprc, RandomScoresMatchExpectedValue) {
  // Under a uniformly random ranking, E[AP] = (H_n + (P-1)/(n-1) (n - H_n)) / n.
  const std::size_t n = 2000, reps = 300;
  const double rate = 0.3;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> aps;
  for (std::size_t r = 0; r < reps; ++r) {
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n, 0);
    for (auto& v : s) v = u(rng);
    const auto pos = static_cast<std::size_t>(rate * n);
    for (std::size_t i = 0; i < pos; ++i) y[i] = 1;
    aps.push_back(auprc(s, y));
  }
  double h = 0;
  for (std::size_t k = 1; k <= n; ++k) h += 1.0 / static_cast<double>(k);
  const double p = rate * n;
  const double expected = (h + (p - 1) / (n - 1.0) * (n - h)) / n;
  const auto stat = summarize(aps);
  EXPECT_LT(std::abs(stat.mean - expected), 3 * stat.std / std::sqrt(double(reps)));
  EXPECT_NEAR(stat.mean, rate, 0.01);
}

TEST(MicroF1, WorkedExamples) {
  LabelMatrix truth = {bits({1, 0, 1}), bits({0, 1, 0})};
  LabelMatrix pred = {bits({1, 0, 0}), bits({0, 1, 1})};
  EXPECT_EQ(micro_f1(pred, truth), 2.0 / 3.0);
  EXPECT_EQ(micro_f1(truth, truth), 1.0);
  EXPECT_EQ(micro_f1({bits({0, 0, 0}), bits({0, 0, 0})}, truth), 0.0);
  EXPECT_EQ(micro_f1({bits({0, 0})}, {bits({0, 0})}), 0.0);
  EXPECT_THROW(micro_f1({bits({1, 0})}, truth), std::invalid_argument);
  EXPECT_THROW(micro_f1({bits({1, 0}), bits({1})}, truth), std::invalid_argument);
}

TEST(Metrics, AgreeWithBruteForce) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> level(0, 20);
  for (int t = 0; t < 2000; ++t) {
    const std::size_t n = 2 + rng() % 30;
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = t % 2 ? level(rng) / 20.0 : std::ldexp(double(rng() >> 11), -53);
      y[i] = rng() % 3 == 0;
    }
    y[0] = 1;
    y[1] = 0;
    EXPECT_EQ(auroc(s, y), brute_auroc(s, y));
    EXPECT_NEAR(auprc(s, y), brute_auprc(s, y), 1e-12);
  }
}

TEST(Adam, MinimizesQuadraticAndFirstStepHasLrMagnitude) {
  Tensor w = Tensor::from({2}, {3.0, -2.0}, true);
  Adam opt({w}, 0.1);
  auto loss_of = [&] { return ad::sum(ad::mul(w, w)); };
  opt.zero_grad();
  ad::backward(loss_of());
  opt.step();
  EXPECT_NEAR(w.values()[0], 2.9, 1e-9);
  EXPECT_NEAR(w.values()[1], -1.9, 1e-9);
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    ad::backward(loss_of());
    opt.step();
  }
  EXPECT_LT(loss_of().item(), 1e-3);
  EXPECT_EQ(opt.steps(), 501u);
}

TEST(TrainConfigTest, Validation) {
  TrainConfig c;
  c.validate();
  c.mask_p = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.max_epochs = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);  // patience 10 > 5
  c.patience = 5;
  c.validate();
}

TEST(DeriveSeed, ComponentsAreIndependent) {
  EXPECT_EQ(derive_seed(1, "init"), derive_seed(1, "init"));
  EXPECT_NE(derive_seed(1, "init"), derive_seed(1, "mask"));
  EXPECT_NE(derive_seed(1, "init"), derive_seed(2, "init"));
}

TEST(Fit, ZeroEpochsReturnsInitialModel) {
  auto cfg = tiny_run();
  cfg.train.max_epochs = 0;
  cfg.train.patience = 0;
  Fixture f(tiny_world(), cfg);
  auto m = experiment::build_model(f.config, f.prepared);
  const auto before = Checkpoint::capture(*m.store, 0);
  train::Dataset ds(f.world.entities, f.prepared.samples, f.prepared.vocab, f.prepared.kg_rows);
  auto r = fit(*m.model, *m.store, ds, cfg.train);
  EXPECT_TRUE(r.loss_curve.empty());
  ASSERT_EQ(r.valid_curve.size(), 1u);
  EXPECT_EQ(r.best_epoch, 0u);
  const auto after = Checkpoint::capture(*m.store, 0);
  for (std::size_t i = 0; i < before.params.size(); ++i) EXPECT_EQ(before.params[i].values, after.params[i].values);
  auto valid = f.prepared.samples.indices(data::SplitTag::valid);
  EXPECT_EQ(r.valid_curve[0], *evaluate(*m.model, ds, valid).auroc);
}

TEST(Fit, SameSeedGivesIdenticalRuns) {
  Fixture f(tiny_world(), tiny_run(5));
  auto a = experiment::train_and_evaluate(f.world.entities, f.prepared, f.config);
  auto b = experiment::train_and_evaluate(f.world.entities, f.prepared, f.config);
  ASSERT_EQ(a.fit.loss_curve.size(), 3u);
  EXPECT_EQ(a.fit.loss_curve, b.fit.loss_curve);
  EXPECT_EQ(a.fit.valid_curve, b.fit.valid_curve);
  EXPECT_EQ(a.test.probabilities, b.test.probabilities);
  auto c = f.config;
  c.seed = 6;
  auto d = experiment::train_and_evaluate(f.world.entities, f.prepared, c);
  EXPECT_NE(a.fit.loss_curve, d.fit.loss_curve);
}

TEST(Fit, RestoresBestEpoch) {
  auto cfg = tiny_run(2);
  cfg.train.max_epochs = 4;
  cfg.train.patience = 4;
  Fixture f(tiny_world(2), cfg);
  auto r = experiment::train_and_evaluate(f.world.entities, f.prepared, f.config);
  train::Dataset ds(f.world.entities, f.prepared.samples, f.prepared.vocab, f.prepared.kg_rows);
  auto valid = f.prepared.samples.indices(data::SplitTag::valid);
  const double metric = selection_metric(evaluate(*r.model.model, ds, valid), fusion::Task::dti);
  EXPECT_EQ(metric, r.fit.valid_curve[r.fit.best_epoch]);
  EXPECT_EQ(metric, *std::max_element(r.fit.valid_curve.begin(), r.fit.valid_curve.end()));
}

TEST(Fit, EarlyStoppingHonorsPatience) {
  auto cfg = tiny_run(1);
  cfg.train.learning_rate = 1e-12;  // validation metric cannot improve meaningfully
  cfg.train.max_epochs = 8;
  cfg.train.patience = 1;
  Fixture f(tiny_world(1), cfg);
  auto r = experiment::train_and_evaluate(f.world.entities, f.prepared, f.config);
  EXPECT_LT(r.fit.loss_curve.size(), 8u);
  EXPECT_TRUE(r.fit.stopped_early);
}

TEST(Fit, SmallStepDecreasesFrozenBatchLoss) {
  Fixture f(tiny_world(3), tiny_run(3));
  auto m = experiment::build_model(f.config, f.prepared);
  train::Dataset ds(f.world.entities, f.prepared.samples, f.prepared.vocab, f.prepared.kg_rows);
  auto idx = f.prepared.samples.indices(data::SplitTag::train);
  idx.resize(16);
  ad::ModeGuard frozen(false);  // no dropout, no masking: the batch is a fixed function
  auto loss_at = [&] { return bce_loss(m.model->forward(ds.batch(idx)), ds.labels(idx), 1); };
  Adam opt(m.store->tensors(), 1e-6);
  opt.zero_grad();
  Tensor l0 = loss_at();
  ad::backward(l0);
  opt.step();
  ad::NoGradGuard ng;
  EXPECT_LT(loss_at().item(), l0.item());
}

TEST(Fit, DivergenceAbortsWithLocation) {
  Fixture f(tiny_world(), tiny_run());
  auto m = experiment::build_model(f.config, f.prepared);
  train::Dataset ds(f.world.entities, f.prepared.samples, f.prepared.vocab, f.prepared.kg_rows);
  Tensor w = m.store->get("fusion.out.bias");
  w.mutable_values()[0] = std::numeric_limits<double>::quiet_NaN();
  auto tc = f.config.train;
  try {
    fit(*m.model, *m.store, ds, tc);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1, batch 0"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, RoundTripReproducesMetricsBitIdentically) {
  Fixture f(tiny_world(4), tiny_run(4));
  auto r = experiment::train_and_evaluate(f.world.entities, f.prepared, f.config);
  auto path = std::filesystem::temp_directory_path() / "kedd_train_ckpt" / "model.ckpt";
  r.fit.best.save(path);
  auto loaded = Checkpoint::load(path);
  EXPECT_EQ(loaded.fingerprint, f.config.fingerprint());

  auto other = f.config;
  other.seed = 99;  // different initialization, same architecture
  auto fresh = experiment::build_model(other, f.prepared);
  loaded.restore(*fresh.store);
  train::Dataset ds(f.world.entities, f.prepared.samples, f.prepared.vocab, f.prepared.kg_rows);
  auto test = evaluate(*fresh.model, ds, f.prepared.samples.indices(data::SplitTag::test));
  EXPECT_EQ(test.probabilities, r.test.probabilities);
  EXPECT_EQ(test.auroc, r.test.auroc);
  EXPECT_EQ(test.auprc, r.test.auprc);
  EXPECT_EQ(test.loss, r.test.loss);

  auto bigger = f.config;
  bigger.model.sk_dim = 9;
  auto mismatched = experiment::build_model(bigger, f.prepared);
  EXPECT_THROW(loaded.restore(*mismatched.store), std::invalid_argument);
}

TEST(Ablation, SparseAttentionOffIsIdenticalWithoutMissingSk) {
  auto w = tiny_world(6);
  w.missing_sk = 0.0;
  auto cfg = tiny_run(6);
  cfg.train.mask_p = 0.0;
  Fixture f(w, cfg);
  auto full = experiment::train_and_evaluate(f.world.entities, f.prepared, f.config);
  auto off = f.config;
  off.model.task.ablations.use_sparse_attention = false;
  auto ablated = experiment::train_and_evaluate(f.world.entities, f.prepared, off);
  EXPECT_EQ(full.fit.loss_curve, ablated.fit.loss_curve);
  EXPECT_EQ(full.test.probabilities, ablated.test.probabilities);
  EXPECT_EQ(full.test.auroc, ablated.test.auroc);
}

TEST(Report, JsonHasMeanStdAndCurves) {
  RunRecord a, b;
  a.seed = 1;
  a.test.auroc = 0.8;
  a.test.auprc = 0.7;
  a.test.micro_f1 = 0.6;
  a.fit.loss_curve = {0.7, 0.6};
  b.seed = 2;
  b.test.auroc = 0.6;
  b.test.auprc = 0.5;
  b.test.micro_f1 = 0.4;
  auto j = metrics_report({a, b}, "abc");
  EXPECT_DOUBLE_EQ(j["auroc"]["mean"].get<double>(), 0.7);
  EXPECT_DOUBLE_EQ(j["auroc"]["std"].get<double>(), 0.1);
  EXPECT_EQ(j["runs"].size(), 2u);
  EXPECT_EQ(j["runs"][0]["loss_curve"].size(), 2u);
  EXPECT_EQ(j["config_fingerprint"], "abc");
}

TEST(RunConfigTest, FlatKeysRoundTripAndRejectUnknown) {
  experiment::RunConfig c;
  c.set("train.lr", 0.01);
  c.set("gin.readout", "sum");
  c.set("mcnn.depths", nlohmann::json::array({1, 3, 5}));
  c.set("ablation.use_uk", false);
  experiment::RunConfig d;
  d.merge(c.to_json());
  EXPECT_EQ(d.to_json(), c.to_json());
  EXPECT_EQ(d.fingerprint(), c.fingerprint());
  EXPECT_EQ(d.model.mcnn.branch_depths, (std::vector<std::size_t>{1, 3, 5}));
  EXPECT_THROW(c.set("train.learning_rate", 0.1), std::invalid_argument);
  EXPECT_THROW(c.set("train.batch_size", -1), std::invalid_argument);
  EXPECT_THROW(c.set("gin.readout", "max"), std::invalid_argument);
  EXPECT_THROW(c.set("task", "xyz"), std::invalid_argument);
}
