// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "kedd/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "kedd/io.hpp"

namespace kedd::train {

using nlohmann::json;

Tensor bce_loss(const Tensor& logits, const LabelMatrix& labels, std::size_t arity) {
  if (arity == 0) throw std::invalid_argument("bce_loss: arity must be positive");
  if (logits.numel() != labels.size() * arity)
    throw std::invalid_argument("bce_loss: " + std::to_string(logits.numel()) + " logits for " +
                                std::to_string(labels.size()) + " samples of arity " + std::to_string(arity));
  std::vector<double> flat;
  flat.reserve(logits.numel());
  for (const auto& row : labels) {
    if (row.size() != arity) throw std::invalid_argument("bce_loss: label row has the wrong arity");
    for (auto l : row) {
      if (l > 1) throw std::invalid_argument("bce_loss: labels must be 0 or 1");
      flat.push_back(l);
    }
  }
  return ad::bce_with_logits(logits, flat);
}

namespace {

// count / total, rounded so that f(total - count) == 1 - f(count) bitwise:
// the upper half is divided directly, the lower half is one minus its mirror.
double symmetric_ratio(double count, double total) {
  return count >= total / 2 ? count / total : 1.0 - (total - count) / total;
}

void check_scores(std::span<const double> scores, std::size_t labels, const char* what) {
  if (scores.size() != labels) throw std::invalid_argument(std::string(what) + ": scores and labels differ in length");
  for (double v : scores)
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": scores must be finite");
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_scores(scores, labels.size(), "auroc");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });
  double pos = 0, neg = 0, u = 0;
  // Walk tie groups in ascending order; a positive beats every negative below
  // its group and half of the negatives inside it.
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double gp = 0, gn = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] > 1) throw std::invalid_argument("auroc: labels must be 0 or 1");
      (labels[order[j]] ? gp : gn) += 1;
      ++j;
    }
    u += gp * neg + 0.5 * gp * gn;
    pos += gp;
    neg += gn;
    i = j;
  }
  if (pos == 0 || neg == 0) throw std::invalid_argument("auroc: needs at least one positive and one negative");
  return symmetric_ratio(u, pos * neg);
}

double auprc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_scores(scores, labels.size(), "auprc");
  const double total_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  if (total_pos == 0) throw std::invalid_argument("auprc: needs at least one positive");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return scores[i] > scores[j]; });
  double tp = 0, fp = 0, ap = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double gp = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]]) gp += 1;
      else fp += 1;
      ++j;
    }
    tp += gp;
    if (gp > 0) ap += (gp / total_pos) * (tp / (tp + fp));
    i = j;
  }
  return ap;
}

double micro_f1(const LabelMatrix& pred, const LabelMatrix& truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("micro_f1: row counts differ");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != truth[i].size()) throw std::invalid_argument("micro_f1: row " + std::to_string(i) + " widths differ");
    for (std::size_t j = 0; j < pred[i].size(); ++j) {
      const bool p = pred[i][j] != 0, t = truth[i][j] != 0;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
  }
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : static_cast<double>(2 * tp) / static_cast<double>(denom);
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view component) {
  std::uint64_t x = io::fnv1a(component, root ^ 0x51ed270b27e1f3a5ULL);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr > 0)) throw std::invalid_argument("Adam: learning rate must be positive");
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto g = params_[k].grad_view();
    if (g.empty()) continue;
    auto w = params_[k].mutable_values();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1 - beta2_) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (patience > max_epochs) throw std::invalid_argument("patience must not exceed max_epochs");
  if (mask_p < 0 || mask_p > 1) throw std::invalid_argument("mask_p must be in [0, 1]");
}

Dataset::Dataset(const data::EntityTable& entities, data::SampleSet samples, const text::Vocabulary& vocab,
                 const std::vector<std::optional<std::size_t>>& kg_rows)
    : entities_(&entities), samples_(std::move(samples)) {
  if (kg_rows.size() != entities.size()) throw std::invalid_argument("Dataset: one kg row per entity expected");
  samples_.validate(entities);
  docs_.reserve(entities.size());
  for (const auto& r : entities.records()) docs_.push_back(text::tokenize(r.text.value_or(""), vocab));
  inputs_.resize(entities.size());
  for (std::size_t i = 0; i < entities.size(); ++i) {
    const auto& r = entities[i];
    auto& in = inputs_[i];
    in.kind = r.kind;
    in.graph = r.graph();
    in.protein = r.protein();
    in.kg_row = kg_rows[i];
    in.text = r.text ? &docs_[i] : nullptr;
  }
  for (const auto& s : samples_.samples) {
    a_.push_back(*entities.index_of(s.a));
    b_.push_back(s.b ? *entities.index_of(*s.b) : SIZE_MAX);
  }
}

std::vector<fusion::PairInput> Dataset::batch(std::span<const std::size_t> indices) const {
  std::vector<fusion::PairInput> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back({&inputs_[a_.at(i)], b_[i] == SIZE_MAX ? nullptr : &inputs_[b_[i]]});
  return out;
}

LabelMatrix Dataset::labels(std::span<const std::size_t> indices) const {
  LabelMatrix out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(samples_.samples.at(i).labels);
  return out;
}

EvalResult evaluate(const fusion::KeddModel& model, const Dataset& data, std::span<const std::size_t> indices,
                    std::size_t batch_size) {
  ad::ModeGuard eval(false);
  ad::NoGradGuard no_grad;
  EvalResult r;
  if (indices.empty()) return r;
  const std::size_t arity = data.arity();
  double loss_sum = 0;
  std::vector<double> logits;
  for (std::size_t s = 0; s < indices.size(); s += batch_size) {
    auto chunk = indices.subspan(s, std::min(batch_size, indices.size() - s));
    Tensor out = model.forward(data.batch(chunk));
    loss_sum += bce_loss(out, data.labels(chunk), arity).item() * static_cast<double>(chunk.size());
    logits.insert(logits.end(), out.values().begin(), out.values().end());
  }
  r.loss = loss_sum / static_cast<double>(indices.size());
  std::vector<std::uint8_t> flat;
  LabelMatrix truth = data.labels(indices), pred(indices.size());
  for (const auto& row : truth) flat.insert(flat.end(), row.begin(), row.end());
  r.probabilities.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    r.probabilities[i] = 1.0 / (1.0 + std::exp(-logits[i]));
    pred[i / arity].push_back(logits[i] > 0 ? 1 : 0);  // probability above one half
  }
  r.micro_f1 = micro_f1(pred, truth);
  const auto positives = std::count(flat.begin(), flat.end(), 1);
  if (!std::all_of(logits.begin(), logits.end(), [](double v) { return std::isfinite(v); })) return r;
  if (positives > 0) r.auprc = auprc(r.probabilities, flat);
  if (positives > 0 && positives < static_cast<std::ptrdiff_t>(flat.size())) r.auroc = auroc(r.probabilities, flat);
  return r;
}

Checkpoint Checkpoint::capture(const nn::ParameterStore& store, std::uint64_t fingerprint) {
  Checkpoint c;
  c.fingerprint = fingerprint;
  for (const auto& p : store.parameters())
    c.params.push_back({p.name, p.tensor.shape(), {p.tensor.values().begin(), p.tensor.values().end()}});
  return c;
}

void Checkpoint::restore(nn::ParameterStore& store) const {
  const auto& ps = store.parameters();
  if (ps.size() != params.size())
    throw std::invalid_argument("checkpoint has " + std::to_string(params.size()) + " parameters, model has " +
                                std::to_string(ps.size()));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i].name != params[i].name || ps[i].tensor.shape() != params[i].shape)
      throw std::invalid_argument("checkpoint parameter '" + params[i].name + "' does not match '" + ps[i].name + "'");
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Tensor t = ps[i].tensor;
    std::copy(params[i].values.begin(), params[i].values.end(), t.mutable_values().begin());
  }
}

namespace {

constexpr char kCheckpointMagic[8] = {'K', 'E', 'D', 'D', 'C', 'K', 'P', '1'};

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw std::runtime_error("checkpoint is truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put<std::uint64_t>(out, fingerprint);
  put<std::uint64_t>(out, params.size());
  for (const auto& b : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(b.name.size()));
    out += b.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(b.shape.size()));
    for (auto d : b.shape) put<std::uint64_t>(out, d);
    for (double v : b.values) put<double>(out, v);
  }
  io::write_atomic(path, out);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  const std::string in = io::read_file(path);
  if (in.size() < sizeof kCheckpointMagic || std::memcmp(in.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw std::runtime_error(path.string() + " is not a checkpoint");
  std::size_t pos = sizeof kCheckpointMagic;
  Checkpoint c;
  c.fingerprint = take<std::uint64_t>(in, pos);
  const auto n = take<std::uint64_t>(in, pos);
  for (std::uint64_t k = 0; k < n; ++k) {
    Blob b;
    const auto len = take<std::uint32_t>(in, pos);
    if (pos + len > in.size()) throw std::runtime_error("checkpoint is truncated");
    b.name = in.substr(pos, len);
    pos += len;
    const auto rank = take<std::uint32_t>(in, pos);
    for (std::uint32_t r = 0; r < rank; ++r) b.shape.push_back(take<std::uint64_t>(in, pos));
    b.values.resize(ad::numel(b.shape));
    for (auto& v : b.values) v = take<double>(in, pos);
    c.params.push_back(std::move(b));
  }
  if (pos != in.size()) throw std::runtime_error("checkpoint has trailing bytes");
  return c;
}

double selection_metric(const EvalResult& r, fusion::Task task) {
  if (task == fusion::Task::ppi) return r.micro_f1;
  return r.auroc ? *r.auroc : -r.loss;  // single-class validation falls back to loss
}

FitResult fit(const fusion::KeddModel& model, nn::ParameterStore& store, const Dataset& data, const TrainConfig& config,
              std::uint64_t fingerprint) {
  config.validate();
  const auto task = model.config().task.task;
  const auto train_idx = data.samples().indices(data::SplitTag::train);
  const auto valid_idx = data.samples().indices(data::SplitTag::valid);
  if (config.max_epochs > 0 && train_idx.empty()) throw std::invalid_argument("fit: no training samples");

  FitResult result;
  auto validate_now = [&] {
    return valid_idx.empty() ? 0.0 : selection_metric(evaluate(model, data, valid_idx), task);
  };
  double best = validate_now();
  result.valid_curve.push_back(best);
  result.best = Checkpoint::capture(store, fingerprint);

  Adam adam(store.tensors(), config.learning_rate);
  std::mt19937_64 shuffle_rng(derive_seed(config.seed, "shuffle"));
  std::mt19937_64 mask_rng(derive_seed(config.seed, "mask"));
  ad::seed_dropout(derive_seed(config.seed, "dropout"));
  std::vector<std::size_t> order = train_idx;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0;
    {
      ad::ModeGuard train_mode(true);
      for (std::size_t s = 0, b = 0; s < order.size(); s += config.batch_size, ++b) {
        std::span<const std::size_t> chunk(order.data() + s, std::min(config.batch_size, order.size() - s));
        adam.zero_grad();
        Tensor loss = bce_loss(model.forward(data.batch(chunk), config.mask_p, &mask_rng), data.labels(chunk),
                               data.arity());
        const double value = loss.item();
        if (!std::isfinite(value))
          throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
        ad::backward(loss);
        adam.step();
        loss_sum += value * static_cast<double>(chunk.size());
      }
    }
    result.loss_curve.push_back(loss_sum / static_cast<double>(order.size()));
    const double metric = validate_now();
    result.valid_curve.push_back(metric);
    if (valid_idx.empty() || metric > best) {
      best = metric;
      result.best_epoch = epoch;
      result.best = Checkpoint::capture(store, fingerprint);
      since_best = 0;
    } else if (++since_best >= config.patience) {
      result.stopped_early = true;
      break;
    }
  }
  result.best.restore(store);
  return result;
}

MetricStat summarize(const std::vector<double>& values) {
  MetricStat s;
  s.n = values.size();
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  double ss = 0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(s.n));
  return s;
}

namespace {

json stat_json(const std::vector<double>& values) {
  if (values.empty()) return nullptr;
  const auto s = summarize(values);
  return {{"mean", s.mean}, {"std", s.std}, {"n", s.n}};
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json metrics_report(const std::vector<RunRecord>& runs, const std::string& fingerprint) {
  std::vector<double> auroc_v, auprc_v, f1_v;
  json per_run = json::array();
  for (const auto& r : runs) {
    if (r.test.auroc) auroc_v.push_back(*r.test.auroc);
    if (r.test.auprc) auprc_v.push_back(*r.test.auprc);
    f1_v.push_back(r.test.micro_f1);
    per_run.push_back({{"seed", r.seed},
                       {"auroc", optional_json(r.test.auroc)},
                       {"auprc", optional_json(r.test.auprc)},
                       {"micro_f1", r.test.micro_f1},
                       {"test_loss", r.test.loss},
                       {"loss_curve", r.fit.loss_curve},
                       {"valid_curve", r.fit.valid_curve},
                       {"best_epoch", r.fit.best_epoch},
                       {"stopped_early", r.fit.stopped_early}});
  }
  return {{"auroc", stat_json(auroc_v)},
          {"auprc", stat_json(auprc_v)},
          {"micro_f1", stat_json(f1_v)},
          {"runs", per_run},
          {"config_fingerprint", fingerprint}};
}

json to_json(const fusion::ModelConfig& c) {
  return {{"task", fusion::to_string(c.task.task)},
          {"label_arity", c.task.label_arity},
          {"ablation.use_sk", c.task.ablations.use_sk},
          {"ablation.use_uk", c.task.ablations.use_uk},
          {"ablation.use_sparse_attention", c.task.ablations.use_sparse_attention},
          {"gin.layers", c.gin.num_layers},
          {"gin.hidden", c.gin.hidden_dim},
          {"gin.readout", c.gin.readout == structure::Readout::mean ? "mean" : "sum"},
          {"mcnn.depths", c.mcnn.branch_depths},
          {"mcnn.channels", c.mcnn.channels},
          {"mcnn.kernel", c.mcnn.kernel_width},
          {"mcnn.embedding", c.mcnn.embedding_dim},
          {"mcnn.output", c.mcnn.output_dim},
          {"mcnn.max_len", c.mcnn.max_len},
          {"text.layers", c.text.layers},
          {"text.heads", c.text.heads},
          {"text.model_dim", c.text.model_dim},
          {"text.ff_dim", c.text.ff_dim},
          {"text.max_tokens", c.text.max_tokens},
          {"vocab_size", c.vocab_size},
          {"attention.heads", c.attention.heads},
          {"attention.k", c.attention.k},
          {"attention.query_dim", c.attention.query_dim},
          {"attention.key_dim", c.attention.key_dim},
          {"sk_dim", c.sk_dim},
          {"uk_dim", c.uk_dim},
          {"branch_dropout", c.branch_dropout},
          {"fusion.hidden", c.fusion_hidden},
          {"fusion.dropout", c.fusion_dropout}};
}

json to_json(const TrainConfig& c) {
  return {{"train.lr", c.learning_rate},     {"train.batch_size", c.batch_size}, {"train.max_epochs", c.max_epochs},
          {"train.patience", c.patience},    {"train.mask_p", c.mask_p},         {"train.seed", c.seed}};
}

}  // namespace kedd::train
