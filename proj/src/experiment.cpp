// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "kedd/experiment.hpp"

#include <functional>
#include <map>
#include <stdexcept>

#include "kedd/io.hpp"

namespace kedd::experiment {

using nlohmann::json;

namespace {

struct Field {
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <class T>
T as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw std::invalid_argument("expected a non-negative integer");
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw std::invalid_argument("expected a number");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw std::invalid_argument("expected true or false");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw std::invalid_argument("expected a string");
    } else {
      if (!v.is_array()) throw std::invalid_argument("expected an array");
      for (const auto& x : v)
        if (!x.is_number_integer() || x.get<std::int64_t>() < 0) throw std::invalid_argument("expected non-negative integers");
    }
    return v.get<T>();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument("config key '" + key + "': " + e.what());
  }
}

template <class T, class M>
Field member(const std::string& key, M RunConfig::*outer, T M::*inner) {
  return {[=](const RunConfig& c) { return json((c.*outer).*inner); },
          [=](RunConfig& c, const json& v) { (c.*outer).*inner = as<T>(v, key); }};
}

template <class T>
Field top(const std::string& key, T RunConfig::*m) {
  return {[=](const RunConfig& c) { return json(c.*m); }, [=](RunConfig& c, const json& v) { c.*m = as<T>(v, key); }};
}

template <class T, class M>
Field model_member(const std::string& key, M fusion::ModelConfig::*outer, T M::*inner) {
  return {[=](const RunConfig& c) { return json((c.model.*outer).*inner); },
          [=](RunConfig& c, const json& v) { (c.model.*outer).*inner = as<T>(v, key); }};
}

template <class T>
Field model_top(const std::string& key, T fusion::ModelConfig::*m) {
  return {[=](const RunConfig& c) { return json(c.model.*m); },
          [=](RunConfig& c, const json& v) { c.model.*m = as<T>(v, key); }};
}

Field ablation(const std::string& key, bool fusion::Ablations::*m) {
  return {[=](const RunConfig& c) { return json(c.model.task.ablations.*m); },
          [=](RunConfig& c, const json& v) { c.model.task.ablations.*m = as<bool>(v, key); }};
}

const std::map<std::string, Field>& fields() {
  using std::size_t;
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    t["task"] = {[](const RunConfig& c) { return json(fusion::to_string(c.task)); },
                 [](RunConfig& c, const json& v) { c.task = fusion::parse_task(as<std::string>(v, "task")); }};
    t["seed"] = top("seed", &RunConfig::seed);
    t["split.mode"] = {[](const RunConfig& c) { return json(data::to_string(c.split.mode)); },
                       [](RunConfig& c, const json& v) { c.split.mode = data::parse_split_mode(as<std::string>(v, "split.mode")); }};
    t["split.train"] = member("split.train", &RunConfig::split, &data::SplitSpec::train);
    t["split.valid"] = member("split.valid", &RunConfig::split, &data::SplitSpec::valid);
    t["split.test"] = member("split.test", &RunConfig::split, &data::SplitSpec::test);
    t["split.folds"] = member("split.folds", &RunConfig::split, &data::SplitSpec::folds);
    t["split.fold"] = member("split.fold", &RunConfig::split, &data::SplitSpec::fold);
    t["kg.dim"] = member("kg.dim", &RunConfig::prone, &kg::ProneConfig::dim);
    t["kg.negative_shift"] = member("kg.negative_shift", &RunConfig::prone, &kg::ProneConfig::negative_shift);
    t["kg.filter_center"] = member("kg.filter_center", &RunConfig::prone, &kg::ProneConfig::filter_center);
    t["kg.filter_sharpness"] = member("kg.filter_sharpness", &RunConfig::prone, &kg::ProneConfig::filter_sharpness);
    t["kg.chebyshev_order"] = member("kg.chebyshev_order", &RunConfig::prone, &kg::ProneConfig::chebyshev_order);
    t["kg.tsvd_oversampling"] = member("kg.tsvd_oversampling", &RunConfig::prone, &kg::ProneConfig::tsvd_oversampling);
    t["kg.tsvd_power_iters"] = member("kg.tsvd_power_iters", &RunConfig::prone, &kg::ProneConfig::tsvd_power_iters);
    t["gin.layers"] = model_member("gin.layers", &fusion::ModelConfig::gin, &structure::GinConfig::num_layers);
    t["gin.hidden"] = model_member("gin.hidden", &fusion::ModelConfig::gin, &structure::GinConfig::hidden_dim);
    t["gin.readout"] = {
        [](const RunConfig& c) { return json(c.model.gin.readout == structure::Readout::mean ? "mean" : "sum"); },
        [](RunConfig& c, const json& v) {
          const auto s = as<std::string>(v, "gin.readout");
          if (s != "mean" && s != "sum") throw std::invalid_argument("config key 'gin.readout': expected mean or sum");
          c.model.gin.readout = s == "mean" ? structure::Readout::mean : structure::Readout::sum;
        }};
    t["mcnn.depths"] = model_member("mcnn.depths", &fusion::ModelConfig::mcnn, &structure::McnnConfig::branch_depths);
    t["mcnn.channels"] = model_member("mcnn.channels", &fusion::ModelConfig::mcnn, &structure::McnnConfig::channels);
    t["mcnn.kernel"] = model_member("mcnn.kernel", &fusion::ModelConfig::mcnn, &structure::McnnConfig::kernel_width);
    t["mcnn.embedding"] = model_member("mcnn.embedding", &fusion::ModelConfig::mcnn, &structure::McnnConfig::embedding_dim);
    t["mcnn.output"] = model_member("mcnn.output", &fusion::ModelConfig::mcnn, &structure::McnnConfig::output_dim);
    t["mcnn.max_len"] = model_member("mcnn.max_len", &fusion::ModelConfig::mcnn, &structure::McnnConfig::max_len);
    t["text.layers"] = model_member("text.layers", &fusion::ModelConfig::text, &text::TransformerConfig::layers);
    t["text.heads"] = model_member("text.heads", &fusion::ModelConfig::text, &text::TransformerConfig::heads);
    t["text.model_dim"] = model_member("text.model_dim", &fusion::ModelConfig::text, &text::TransformerConfig::model_dim);
    t["text.ff_dim"] = model_member("text.ff_dim", &fusion::ModelConfig::text, &text::TransformerConfig::ff_dim);
    t["text.max_tokens"] = model_member("text.max_tokens", &fusion::ModelConfig::text, &text::TransformerConfig::max_tokens);
    t["text.min_freq"] = top("text.min_freq", &RunConfig::vocab_min_freq);
    t["attention.heads"] = model_member("attention.heads", &fusion::ModelConfig::attention, &fusion::SparseAttentionConfig::heads);
    t["attention.k"] = model_member("attention.k", &fusion::ModelConfig::attention, &fusion::SparseAttentionConfig::k);
    t["attention.key_dim"] = model_member("attention.key_dim", &fusion::ModelConfig::attention, &fusion::SparseAttentionConfig::key_dim);
    t["sk_dim"] = model_top("sk_dim", &fusion::ModelConfig::sk_dim);
    t["uk_dim"] = model_top("uk_dim", &fusion::ModelConfig::uk_dim);
    t["branch_dropout"] = model_top("branch_dropout", &fusion::ModelConfig::branch_dropout);
    t["fusion.hidden"] = model_top("fusion.hidden", &fusion::ModelConfig::fusion_hidden);
    t["fusion.dropout"] = model_top("fusion.dropout", &fusion::ModelConfig::fusion_dropout);
    t["ablation.use_sk"] = ablation("ablation.use_sk", &fusion::Ablations::use_sk);
    t["ablation.use_uk"] = ablation("ablation.use_uk", &fusion::Ablations::use_uk);
    t["ablation.use_sparse_attention"] = ablation("ablation.use_sparse_attention", &fusion::Ablations::use_sparse_attention);
    t["train.lr"] = member("train.lr", &RunConfig::train, &train::TrainConfig::learning_rate);
    t["train.batch_size"] = member("train.batch_size", &RunConfig::train, &train::TrainConfig::batch_size);
    t["train.max_epochs"] = member("train.max_epochs", &RunConfig::train, &train::TrainConfig::max_epochs);
    t["train.patience"] = member("train.patience", &RunConfig::train, &train::TrainConfig::patience);
    t["train.mask_p"] = member("train.mask_p", &RunConfig::train, &train::TrainConfig::mask_p);
    return t;
  }();
  return table;
}

}  // namespace

json RunConfig::to_json() const {
  json out = json::object();
  for (const auto& [k, f] : fields()) out[k] = f.get(*this);
  return out;
}

void RunConfig::set(const std::string& key, const json& value) {
  auto it = fields().find(key);
  if (it == fields().end()) throw std::invalid_argument("unknown config key '" + key + "'");
  it->second.set(*this, value);
}

void RunConfig::merge(const json& flat) {
  if (!flat.is_object()) throw std::invalid_argument("config must be a JSON object with dotted keys");
  for (const auto& [k, v] : flat.items()) set(k, v);
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, f] : fields()) out.push_back(k);
  return out;
}

void RunConfig::validate() const {
  split.validate();
  prone.validate();
  model.gin.validate();
  model.mcnn.validate();
  model.text.validate();
  train.validate();
  if (model.branch_dropout < 0 || model.branch_dropout >= 1 || model.fusion_dropout < 0 || model.fusion_dropout >= 1)
    throw std::invalid_argument("dropout rates must be in [0, 1)");
  if (model.attention.heads == 0 || model.attention.k == 0) throw std::invalid_argument("attention heads and k must be positive");
  if (model.sk_dim == 0 || model.uk_dim == 0) throw std::invalid_argument("sk_dim and uk_dim must be positive");
}

std::uint64_t RunConfig::fingerprint() const { return io::fnv1a(to_json().dump()); }

std::uint64_t split_seed(const RunConfig& c) { return train::derive_seed(c.seed, "data"); }
std::uint64_t kg_seed(const RunConfig& c) { return train::derive_seed(c.seed, "kg"); }
std::uint64_t init_seed(const RunConfig& c) { return train::derive_seed(c.seed, "init"); }
std::uint64_t train_seed(const RunConfig& c) { return train::derive_seed(c.seed, "train"); }

void apply_split(data::SampleSet& samples, const RunConfig& config) {
  data::SplitSpec split = config.split;
  split.seed = split_seed(config);
  data::split_dataset(samples, split);
}

Prepared prepare(const data::EntityTable& entities, const kg::KnowledgeGraph& graph, data::SampleSet samples,
                 const RunConfig& config) {
  config.validate();
  Prepared p;
  p.coverage = data::link_to_kg(entities, graph);
  samples.validate(entities);
  apply_split(samples, config);
  p.graph = data::filter_leakage(graph, samples, entities, &p.edges_removed);
  p.samples = std::move(samples);
  kg::ProneConfig prone = config.prone;
  prone.seed = kg_seed(config);
  p.e = kg::embed_graph(p.graph, prone);
  std::vector<std::string> corpus;
  for (const auto& r : entities.records())
    if (r.text) corpus.push_back(*r.text);
  p.vocab = text::Vocabulary::build(corpus, config.vocab_min_freq);
  p.kg_rows = data::resolve_kg_rows(entities, p.graph.entity_ids());
  return p;
}

fusion::ModelConfig resolve_model(const RunConfig& config, const Prepared& prepared) {
  fusion::ModelConfig m = config.model;
  const auto ablations = m.task.ablations;
  m.task = fusion::TaskSpec::make(config.task, prepared.samples.task.label_arity);
  m.task.ablations = ablations;
  m.vocab_size = prepared.vocab.size();
  m.attention.query_dim = prepared.e.dim;
  return m;
}

Model build_model(const RunConfig& config, const Prepared& prepared) {
  Model m;
  m.store = std::make_unique<nn::ParameterStore>(init_seed(config));
  m.model = std::make_unique<fusion::KeddModel>(*m.store, resolve_model(config, prepared), prepared.e.to_tensor());
  return m;
}

RunResult train_and_evaluate(const data::EntityTable& entities, const Prepared& prepared, const RunConfig& config) {
  RunResult r;
  r.model = build_model(config, prepared);
  train::Dataset ds(entities, prepared.samples, prepared.vocab, prepared.kg_rows);
  train::TrainConfig tc = config.train;
  tc.seed = train_seed(config);
  r.fit = train::fit(*r.model.model, *r.model.store, ds, tc, config.fingerprint());
  const auto test_idx = prepared.samples.indices(data::SplitTag::test);
  r.test = train::evaluate(*r.model.model, ds, test_idx);
  return r;
}

}  // namespace kedd::experiment
