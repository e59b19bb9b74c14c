// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "kedd/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>

#include "kedd/data.hpp"
#include "kedd/experiment.hpp"
#include "kedd/io.hpp"
#include "kedd/kg.hpp"
#include "kedd/train.hpp"

namespace kedd::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct DataPaths {
  std::string drugs, proteins, kg, kg_entities, samples;
};

// Flags shared by the commands that resolve a RunConfig.
struct RunFlags {
  std::string config_file;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  std::string task, split;
  std::size_t epochs = 0, batch = 0, patience = 0;
  double lr = 0, mask_p = 0;
  bool no_sk = false, no_uk = false, no_sa = false;
  std::string data_dir;
  DataPaths paths;
  CLI::Option *seed_opt = nullptr, *epochs_opt = nullptr, *batch_opt = nullptr, *patience_opt = nullptr,
              *lr_opt = nullptr, *mask_opt = nullptr;
};

void add_config_flags(CLI::App& app, RunFlags& f) {
  app.add_option("--config", f.config_file, "JSON file with flat dotted keys (a run manifest also works)")
      ->check(CLI::ExistingFile);
  app.add_option("--set", f.sets, "Override one config key, KEY=VALUE (repeatable)");
  f.seed_opt = app.add_option("--seed", f.seed, "Root seed (default: $KEDD_SEED, else 0)");
}

void add_train_flags(CLI::App& app, RunFlags& f) {
  add_config_flags(app, f);
  app.add_option("--task", f.task, "dti, dp, ddi or ppi");
  app.add_option("--split", f.split, "warm, random, cold_drug, cold_protein, cold_cluster or precomputed");
  f.epochs_opt = app.add_option("--epochs", f.epochs, "Maximum training epochs");
  f.batch_opt = app.add_option("--batch-size", f.batch);
  f.patience_opt = app.add_option("--patience", f.patience);
  f.lr_opt = app.add_option("--lr", f.lr, "Adam learning rate");
  f.mask_opt = app.add_option("--mask-p", f.mask_p, "Modality masking probability");
  app.add_flag("--no-sk", f.no_sk, "Drop the structured-knowledge branch");
  app.add_flag("--no-uk", f.no_uk, "Drop the text branch");
  app.add_flag("--no-sa", f.no_sa, "Fill missing structured knowledge with zeros");
}

void add_data_flags(CLI::App& app, RunFlags& f) {
  app.add_option("--data", f.data_dir, "Directory with drugs.jsonl, proteins.jsonl, kg_edges.tsv, samples.csv")
      ->check(CLI::ExistingDirectory);
  app.add_option("--drugs", f.paths.drugs)->check(CLI::ExistingFile);
  app.add_option("--proteins", f.paths.proteins)->check(CLI::ExistingFile);
  app.add_option("--kg", f.paths.kg, "Edge list, head<TAB>relation<TAB>tail")->check(CLI::ExistingFile);
  app.add_option("--kg-entities", f.paths.kg_entities)->check(CLI::ExistingFile);
  app.add_option("--samples", f.paths.samples)->check(CLI::ExistingFile);
}

json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw UsageError("missing file: " + path.string());
  try {
    return json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

std::uint64_t env_seed() {
  const char* v = std::getenv("KEDD_SEED");
  if (!v || !*v) return 0;
  try {
    std::size_t used = 0;
    const auto s = std::stoull(v, &used);
    if (used != std::string(v).size()) throw std::invalid_argument("trailing characters");
    return s;
  } catch (const std::exception&) {
    throw UsageError(std::string("KEDD_SEED is not an unsigned integer: '") + v + "'");
  }
}

void apply(experiment::RunConfig& c, const std::string& key, const json& value) {
  try {
    c.set(key, value);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

// Precedence, lowest first: defaults, $KEDD_SEED, config file, --set, dedicated flags.
experiment::RunConfig resolve_config(const RunFlags& f, json* manifest_inputs) {
  experiment::RunConfig c;
  c.seed = env_seed();
  bool patience_given = false;
  if (!f.config_file.empty()) {
    json j = read_json(f.config_file);
    if (!j.is_object()) throw UsageError(f.config_file + ": expected a JSON object");
    if (j.contains("config") && j["config"].is_object()) {
      if (manifest_inputs && j.contains("inputs")) *manifest_inputs = j["inputs"];
      j = j["config"];
    }
    for (const auto& [key, value] : j.items()) {
      apply(c, key, value);
      patience_given |= key == "train.patience";
    }
  }
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects KEY=VALUE, got '" + s + "'");
    const std::string key = s.substr(0, eq), raw = s.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    apply(c, key, value);
    patience_given |= key == "train.patience";
  }
  if (f.seed_opt && f.seed_opt->count()) c.seed = f.seed;
  if (!f.task.empty()) apply(c, "task", f.task);
  if (!f.split.empty()) apply(c, "split.mode", f.split);
  if (f.epochs_opt && f.epochs_opt->count()) c.train.max_epochs = f.epochs;
  if (f.batch_opt && f.batch_opt->count()) c.train.batch_size = f.batch;
  if (f.patience_opt && f.patience_opt->count()) {
    c.train.patience = f.patience;
    patience_given = true;
  }
  if (f.lr_opt && f.lr_opt->count()) c.train.learning_rate = f.lr;
  if (f.mask_opt && f.mask_opt->count()) c.train.mask_p = f.mask_p;
  if (f.no_sk) c.model.task.ablations.use_sk = false;
  if (f.no_uk) c.model.task.ablations.use_uk = false;
  if (f.no_sa) c.model.task.ablations.use_sparse_attention = false;
  // A short run should not be rejected for the default patience.
  if (!patience_given) c.train.patience = std::min(c.train.patience, c.train.max_epochs);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
  return c;
}

std::string manifest_path(const json& inputs, const char* name) {
  if (inputs.is_object() && inputs.contains(name) && inputs[name].contains("path"))
    return inputs[name]["path"].get<std::string>();
  return {};
}

// Manifest inputs, then --data, then the individual path flags.
DataPaths resolve_paths(const RunFlags& f, const json& manifest_inputs) {
  DataPaths p;
  p.drugs = manifest_path(manifest_inputs, "drugs");
  p.proteins = manifest_path(manifest_inputs, "proteins");
  p.kg = manifest_path(manifest_inputs, "kg");
  p.kg_entities = manifest_path(manifest_inputs, "kg_entities");
  p.samples = manifest_path(manifest_inputs, "samples");
  if (!f.data_dir.empty()) {
    const fs::path d = f.data_dir;
    auto pick = [&](std::string& slot, const char* file) {
      if (fs::exists(d / file)) slot = (d / file).string();
    };
    pick(p.drugs, "drugs.jsonl");
    pick(p.proteins, "proteins.jsonl");
    pick(p.kg, "kg_edges.tsv");
    pick(p.kg_entities, "kg_entities.txt");
    pick(p.samples, "samples.csv");
  }
  auto take = [](std::string& slot, const std::string& flag) {
    if (!flag.empty()) slot = flag;
  };
  take(p.drugs, f.paths.drugs);
  take(p.proteins, f.paths.proteins);
  take(p.kg, f.paths.kg);
  take(p.kg_entities, f.paths.kg_entities);
  take(p.samples, f.paths.samples);
  for (const auto* path : {&p.drugs, &p.proteins, &p.kg, &p.kg_entities, &p.samples})
    if (!path->empty() && !fs::exists(*path)) throw UsageError("missing file: " + *path);
  return p;
}

void require(const std::string& path, const std::string& what, const char* flag) {
  if (path.empty()) throw UsageError("no " + what + " given (use --data or " + flag + ")");
}

void require_entities(const DataPaths& p, fusion::Task task) {
  const auto spec = fusion::TaskSpec::make(task, task == fusion::Task::ppi ? 2 : 1);
  const bool drugs = spec.kind_a == fusion::EntityKind::drug || spec.kind_b == fusion::EntityKind::drug;
  const bool proteins = spec.kind_a == fusion::EntityKind::protein || spec.kind_b == fusion::EntityKind::protein;
  if (drugs) require(p.drugs, "drug file", "--drugs");
  if (proteins) require(p.proteins, "protein file", "--proteins");
}

json file_record(const std::string& path) {
  return {{"path", fs::absolute(path).lexically_normal().string()}, {"fnv1a", io::hex64(io::fnv1a(io::read_file(path)))}};
}

json input_records(const DataPaths& p) {
  json j = json::object();
  const std::pair<const char*, const std::string*> named[] = {
      {"drugs", &p.drugs}, {"proteins", &p.proteins}, {"kg", &p.kg}, {"kg_entities", &p.kg_entities},
      {"samples", &p.samples}};
  for (const auto& [name, path] : named)
    if (!path->empty()) j[name] = file_record(*path);
  return j;
}

// Warns when a replayed input no longer matches the hash recorded at training time.
void check_inputs(const json& recorded, const json& current, std::ostream& err) {
  if (!recorded.is_object()) return;
  for (const auto& [name, rec] : current.items()) {
    if (!recorded.contains(name)) continue;
    if (recorded[name].value("fnv1a", "") != rec.value("fnv1a", ""))
      err << "warning: " << name << " input " << rec["path"].get<std::string>() << " differs from the recorded run\n";
  }
}

json seeds_json(const experiment::RunConfig& c) {
  return {{"root", c.seed},
          {"data", experiment::split_seed(c)},
          {"kg", experiment::kg_seed(c)},
          {"init", experiment::init_seed(c)},
          {"train", experiment::train_seed(c)}};
}

json run_manifest(const std::string& command, const experiment::RunConfig& c, const json& inputs) {
  return {{"command", command},
          {"version", kVersion},
          {"config", c.to_json()},
          {"config_fingerprint", io::hex64(c.fingerprint())},
          {"seeds", seeds_json(c)},
          {"inputs", inputs}};
}

json output_records(const fs::path& dir, const std::vector<std::string>& names) {
  json j = json::object();
  for (const auto& n : names) j[n] = io::hex64(io::fnv1a(io::read_file(dir / n)));
  return j;
}

void write_json(const fs::path& path, const json& j) { io::write_atomic(path, j.dump(2) + "\n"); }

struct Inputs {
  data::EntityTable entities;
  kg::KnowledgeGraph graph;
  data::SampleSet samples;
};

data::EntityTable load_entity_table(const DataPaths& p, std::ostream& err) {
  data::IngestionReport report;
  auto table = data::load_entities(p.drugs, p.proteins, &report);
  if (report.truncated) err << "warning: " << report.truncated << " protein sequences truncated\n";
  if (report.duplicate_bonds) err << "warning: " << report.duplicate_bonds << " duplicate bonds dropped\n";
  if (report.missing_text) err << "note: " << report.missing_text << " entities without text\n";
  if (report.missing_kg) err << "note: " << report.missing_kg << " entities without a KG link\n";
  return table;
}

Inputs load_inputs(const DataPaths& p, fusion::Task task, std::ostream& err) {
  require_entities(p, task);
  require(p.kg, "KG edge list", "--kg");
  require(p.samples, "sample file", "--samples");
  Inputs in;
  in.entities = load_entity_table(p, err);
  const fs::path ents = p.kg_entities;
  in.graph = kg::load_kg(p.kg, p.kg_entities.empty() ? nullptr : &ents);
  in.samples = data::load_samples(p.samples, task);
  return in;
}

void print_coverage(const data::CoverageReport& c, std::ostream& err) {
  for (const auto& w : c.warnings) err << "warning: " << w << "\n";
}

json split_counts(const data::SampleSet& s) {
  return {{"train", s.indices(data::SplitTag::train).size()},
          {"valid", s.indices(data::SplitTag::valid).size()},
          {"test", s.indices(data::SplitTag::test).size()}};
}

std::string fmt(double v, const char* spec = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_embed_kg(const RunFlags& f, const std::string& edges, const std::string& entities, std::size_t dim,
                 bool dim_given, const std::string& out_path, std::ostream& out) {
  auto c = resolve_config(f, nullptr);
  if (dim_given) c.prone.dim = dim;
  try {
    c.prone.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
  const fs::path ent_path = entities;
  const auto graph = kg::load_kg(edges, entities.empty() ? nullptr : &ent_path);
  kg::ProneConfig prone = c.prone;
  prone.seed = experiment::kg_seed(c);
  const auto e = kg::embed_graph(graph, prone);
  const fs::path target = out_path;
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  kg::save_embedding(target, e, graph.entity_ids(), prone, graph.hash());

  DataPaths inputs;
  inputs.kg = edges;
  inputs.kg_entities = entities;
  const fs::path manifest_file = target.string() + ".manifest.json";
  json m = read_json(manifest_file);
  m.update(run_manifest("embed-kg", c, input_records(inputs)));
  m["outputs"] = {{target.filename().string(), io::hex64(io::fnv1a(io::read_file(target)))}};
  write_json(manifest_file, m);
  out << json{{"rows", e.rows}, {"dim", e.dim}, {"out", target.string()}}.dump() << "\n";
  return 0;
}

int cmd_gen_synthetic(data::SyntheticConfig w, CLI::Option* seed_opt, const std::string& task,
                      const std::string& out_dir, std::ostream& out) {
  if (!seed_opt->count()) w.seed = env_seed();
  try {
    if (!task.empty()) w.task = fusion::parse_task(task);
    w.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("invalid synthetic config: ") + e.what());
  }
  const auto world = data::gen_synthetic(w);
  const fs::path dir = out_dir;
  fs::create_directories(dir);
  world.write(dir);
  const std::vector<std::string> files = {"drugs.jsonl", "proteins.jsonl", "kg_edges.tsv", "kg_entities.txt",
                                          "samples.csv"};
  json cfg = {{"task", fusion::to_string(w.task)},
              {"drugs", w.drugs},
              {"proteins", w.proteins},
              {"samples", w.samples},
              {"latent_dim", w.latent_dim},
              {"label_arity", w.label_arity},
              {"w_struct", w.w_struct},
              {"w_kg", w.w_kg},
              {"w_text", w.w_text},
              {"partitioned", w.partitioned},
              {"missing_sk", w.missing_sk},
              {"kg_degree", w.kg_degree},
              {"kg_temperature", w.kg_temperature},
              {"protein_length", w.protein_length},
              {"seed", w.seed}};
  json m = {{"command", "gen-synthetic"},
            {"version", kVersion},
            {"config", cfg},
            {"seeds", {{"root", w.seed}}},
            {"inputs", json::object()},
            {"content_hash", io::hex64(world.content_hash())},
            {"outputs", output_records(dir, files)}};
  write_json(dir / "manifest.json", m);
  out << json{{"entities", world.entities.size()},
              {"kg_edges", world.kg.edges().size()},
              {"samples", world.samples.samples.size()},
              {"out", dir.string()}}
             .dump()
      << "\n";
  return 0;
}

int cmd_train(const RunFlags& f, const std::string& out_dir, std::ostream& out, std::ostream& err) {
  json recorded = json::object();
  const auto c = resolve_config(f, &recorded);
  const auto paths = resolve_paths(f, recorded);
  const json inputs = input_records(paths);
  check_inputs(recorded, inputs, err);
  Inputs in = load_inputs(paths, c.task, err);
  auto prepared = experiment::prepare(in.entities, in.graph, std::move(in.samples), c);
  print_coverage(prepared.coverage, err);
  auto result = experiment::train_and_evaluate(in.entities, prepared, c);

  const fs::path dir = out_dir;
  fs::create_directories(dir);
  result.fit.best.save(dir / "model.ckpt");
  kg::ProneConfig prone = c.prone;
  prone.seed = experiment::kg_seed(c);
  kg::save_embedding(dir / "embedding.bin", prepared.e, prepared.graph.entity_ids(), prone, prepared.graph.hash());
  prepared.vocab.save(dir / "vocab.txt");
  json report = train::metrics_report({{c.seed, result.test, result.fit}}, io::hex64(c.fingerprint()));
  report["split"] = split_counts(prepared.samples);
  report["kg_edges_removed"] = prepared.edges_removed;
  write_json(dir / "metrics.json", report);

  json m = run_manifest("train", c, inputs);
  m["label_arity"] = prepared.samples.task.label_arity;
  m["outputs"] = output_records(dir, {"model.ckpt", "embedding.bin", "vocab.txt", "metrics.json"});
  write_json(dir / "manifest.json", m);
  out << json{{"auroc", report["auroc"]["mean"]},
              {"auprc", report["auprc"]["mean"]},
              {"micro_f1", report["micro_f1"]["mean"]},
              {"best_epoch", result.fit.best_epoch},
              {"out", dir.string()}}
             .dump()
      << "\n";
  return 0;
}

// A trained run directory loaded back for scoring.
struct LoadedRun {
  experiment::RunConfig config;
  json manifest;
  DataPaths paths;
  data::EntityTable entities;
  std::vector<std::string> kg_ids;
  kg::EmbeddingMatrix e;
  text::Vocabulary vocab;
  std::size_t label_arity = 1;
};

LoadedRun load_run(const fs::path& dir, const RunFlags& f, std::ostream& err) {
  LoadedRun r;
  r.manifest = read_json(dir / "manifest.json");
  if (r.manifest.value("command", "") != "train") throw UsageError((dir / "manifest.json").string() + " is not a training run");
  for (const auto* name : {"model.ckpt", "embedding.bin", "vocab.txt"})
    if (!fs::exists(dir / name)) throw UsageError("missing file: " + (dir / name).string());
  for (const auto& [key, value] : r.manifest["config"].items()) apply(r.config, key, value);
  r.label_arity = r.manifest.value("label_arity", std::size_t{1});
  r.paths = resolve_paths(f, r.manifest["inputs"]);
  require_entities(r.paths, r.config.task);
  r.entities = load_entity_table(r.paths, err);
  r.e = kg::load_embedding(dir / "embedding.bin", &r.kg_ids);
  r.vocab = text::Vocabulary::load(dir / "vocab.txt");
  return r;
}

experiment::Model restore_model(const LoadedRun& run, const experiment::Prepared& p, const fs::path& dir) {
  auto model = experiment::build_model(run.config, p);
  const auto ckpt = train::Checkpoint::load(dir / "model.ckpt");
  if (ckpt.fingerprint != run.config.fingerprint())
    throw std::runtime_error("checkpoint fingerprint " + io::hex64(ckpt.fingerprint) + " does not match the run config " +
                             io::hex64(run.config.fingerprint()));
  ckpt.restore(*model.store);
  return model;
}

experiment::Prepared prepared_for(const LoadedRun& run, data::SampleSet samples) {
  experiment::Prepared p;
  p.samples = std::move(samples);
  p.e = run.e;
  p.vocab = run.vocab;
  p.kg_rows = data::resolve_kg_rows(run.entities, run.kg_ids);
  return p;
}

int cmd_eval(const RunFlags& f, const std::string& run_dir, const std::string& split, const std::string& out_path,
             std::ostream& out, std::ostream& err) {
  auto run = load_run(run_dir, f, err);
  require(run.paths.samples, "sample file", "--samples");
  check_inputs(run.manifest["inputs"], input_records(run.paths), err);
  auto samples = data::load_samples(run.paths.samples, run.config.task);
  if (samples.task.label_arity != run.label_arity)
    throw data::TaskMismatch("samples have " + std::to_string(samples.task.label_arity) + " labels, the model predicts " +
                             std::to_string(run.label_arity));
  samples.validate(run.entities);
  std::vector<std::size_t> idx;
  if (split == "all") {
    idx.resize(samples.samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  } else {
    experiment::apply_split(samples, run.config);
    const auto tag = split == "train" ? data::SplitTag::train
                     : split == "valid" ? data::SplitTag::valid
                                        : data::SplitTag::test;
    idx = samples.indices(tag);
  }
  if (idx.empty()) throw UsageError("split '" + split + "' has no samples");
  auto p = prepared_for(run, std::move(samples));
  auto model = restore_model(run, p, run_dir);
  train::Dataset ds(run.entities, p.samples, p.vocab, p.kg_rows);
  const auto result = train::evaluate(*model.model, ds, idx);
  json report = train::metrics_report({{run.config.seed, result, {}}}, io::hex64(run.config.fingerprint()));
  report["split"] = split;
  report["samples"] = idx.size();
  if (!out_path.empty()) write_json(out_path, report);
  out << report.dump() << "\n";
  return 0;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

int cmd_predict(const RunFlags& f, const std::string& run_dir, const std::string& pairs_path,
                const std::string& out_path, std::ostream& out, std::ostream& err) {
  auto run = load_run(run_dir, f, err);
  const auto spec = fusion::TaskSpec::make(run.config.task, run.label_arity);

  std::stringstream in(io::read_file(pairs_path));
  std::string line;
  if (!std::getline(in, line)) throw UsageError(pairs_path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  const auto col = [&](const char* name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  };
  const auto ca = col("a"), cb = col("b");
  if (!ca) throw UsageError(pairs_path + ": header needs an 'a' column");
  if (spec.pair() != cb.has_value())
    throw data::TaskMismatch(pairs_path + (spec.pair() ? ": pair task needs a 'b' column" : ": dp takes no 'b' column"));

  // Unique ordered pairs; an unordered pair seen twice goes to a second layer
  // because a sample set rejects duplicate unordered pairs.
  std::vector<std::pair<std::string, std::string>> rows;
  std::map<std::pair<std::string, std::string>, std::size_t> unique;
  std::vector<std::pair<std::string, std::string>> order;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size())
      throw data::FormatError(pairs_path + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                              " cells");
    std::pair<std::string, std::string> key{cells[*ca], cb ? cells[*cb] : ""};
    for (const auto& id : {key.first, key.second})
      if (!id.empty() && !run.entities.index_of(id))
        throw data::FormatError(pairs_path + ":" + std::to_string(lineno) + ": unknown entity '" + id + "'");
    if (unique.emplace(key, order.size()).second) order.push_back(key);
    rows.push_back(std::move(key));
  }

  std::vector<std::vector<double>> scores(order.size());
  std::vector<std::vector<std::size_t>> layers(2);
  std::set<std::pair<std::string, std::string>> seen;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto u = order[i];
    if (u.first > u.second && !u.second.empty()) std::swap(u.first, u.second);
    layers[seen.insert(u).second ? 0 : 1].push_back(i);
  }
  for (const auto& layer : layers) {
    if (layer.empty()) continue;
    data::SampleSet set;
    set.task = spec;
    for (auto i : layer) {
      data::Sample s;
      s.a = order[i].first;
      if (spec.pair()) s.b = order[i].second;
      s.labels.assign(spec.label_arity, 0);
      s.split = data::SplitTag::test;
      set.samples.push_back(std::move(s));
    }
    auto p = prepared_for(run, std::move(set));
    auto model = restore_model(run, p, run_dir);
    train::Dataset ds(run.entities, p.samples, p.vocab, p.kg_rows);
    std::vector<std::size_t> idx(layer.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto r = train::evaluate(*model.model, ds, idx);
    for (std::size_t i = 0; i < layer.size(); ++i)
      scores[layer[i]].assign(r.probabilities.begin() + i * spec.label_arity,
                              r.probabilities.begin() + (i + 1) * spec.label_arity);
  }

  std::string csv = spec.pair() ? "a,b" : "a";
  if (spec.label_arity == 1) {
    csv += ",score";
  } else {
    for (std::size_t l = 0; l < spec.label_arity; ++l) csv += ",score" + std::to_string(l + 1);
  }
  csv += "\n";
  for (const auto& key : rows) {
    csv += key.first;
    if (spec.pair()) csv += "," + key.second;
    for (double v : scores[unique.at(key)]) csv += "," + fmt(v, "%.17g");
    csv += "\n";
  }
  const fs::path target = out_path;
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  io::write_atomic(target, csv);
  out << json{{"predictions", rows.size()}, {"out", target.string()}}.dump() << "\n";
  return 0;
}

int cmd_sweep_mask(const RunFlags& f, std::size_t seeds, const std::string& out_dir, std::ostream& out,
                   std::ostream& err) {
  if (seeds == 0) throw UsageError("--seeds must be positive");
  json recorded = json::object();
  const auto base = resolve_config(f, &recorded);
  if (!base.model.task.ablations.use_sparse_attention || !base.model.task.ablations.use_sk)
    err << "warning: masking has no effect without the sparse-attention branch\n";
  const auto paths = resolve_paths(f, recorded);
  const json inputs = input_records(paths);
  check_inputs(recorded, inputs, err);
  const Inputs in = load_inputs(paths, base.task, err);

  std::vector<std::vector<train::RunRecord>> records(kMaskGrid.size());
  for (std::size_t s = 0; s < seeds; ++s) {
    auto c = base;
    c.seed = base.seed + s;
    // The split and E depend only on the seed, so one preparation serves the grid.
    const auto prepared = experiment::prepare(in.entities, in.graph, in.samples, c);
    if (s == 0) print_coverage(prepared.coverage, err);
    for (std::size_t g = 0; g < kMaskGrid.size(); ++g) {
      c.train.mask_p = kMaskGrid[g];
      auto r = experiment::train_and_evaluate(in.entities, prepared, c);
      records[g].push_back({c.seed, r.test, r.fit});
    }
  }

  json rows = json::array();
  std::string table = "mask_p\tauroc_mean\tauroc_std\tauprc_mean\tauprc_std\n";
  for (std::size_t g = 0; g < kMaskGrid.size(); ++g) {
    auto c = base;
    c.train.mask_p = kMaskGrid[g];
    json report = train::metrics_report(records[g], io::hex64(c.fingerprint()));
    report["mask_p"] = kMaskGrid[g];
    table += fmt(kMaskGrid[g], "%.2f");
    for (const char* m : {"auroc", "auprc"})
      for (const char* s : {"mean", "std"}) table += "\t" + fmt(report[m][s].get<double>());
    table += "\n";
    rows.push_back(std::move(report));
  }
  const fs::path dir = out_dir;
  fs::create_directories(dir);
  write_json(dir / "sweep.json", {{"grid", kMaskGrid}, {"seeds", seeds}, {"rows", rows}});
  io::write_atomic(dir / "sweep.tsv", table);
  json m = run_manifest("sweep-mask", base, inputs);
  m["sweep_seeds"] = seeds;
  m["outputs"] = output_records(dir, {"sweep.json", "sweep.tsv"});
  write_json(dir / "manifest.json", m);
  out << table;
  return 0;
}

void error_record(std::ostream& err, const char* kind, int code, const std::string& message) {
  err << json{{"error", {{"kind", kind}, {"exit_code", code}, {"message", message}}}}.dump() << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal drug discovery models: KG embedding, training, evaluation, prediction", "kedd"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  RunFlags embed_flags;
  std::string edges, entity_file, embed_out;
  std::size_t dim = 0;
  auto* embed = app.add_subcommand("embed-kg", "Embed a KG edge list with ProNE");
  embed->add_option("--edges", edges, "Edge list, head<TAB>relation<TAB>tail")->required()->check(CLI::ExistingFile);
  embed->add_option("--entities", entity_file, "Entity id file fixing row order")->check(CLI::ExistingFile);
  auto* dim_opt = embed->add_option("--dim", dim, "Embedding width");
  embed->add_option("--out", embed_out, "Embedding file")->required();
  add_config_flags(*embed, embed_flags);

  data::SyntheticConfig world;
  std::string gen_task, gen_out;
  auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic dataset with known ground truth");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--task", gen_task, "dti, dp, ddi or ppi");
  auto* gen_seed = gen->add_option("--seed", world.seed, "Seed (default: $KEDD_SEED, else 0)");
  gen->add_option("--drugs", world.drugs);
  gen->add_option("--proteins", world.proteins);
  gen->add_option("--samples", world.samples);
  gen->add_option("--latent-dim", world.latent_dim);
  gen->add_option("--label-arity", world.label_arity);
  gen->add_option("--w-struct", world.w_struct, "Latent weight seen by structures");
  gen->add_option("--w-kg", world.w_kg, "Latent weight seen by the KG");
  gen->add_option("--w-text", world.w_text, "Latent weight seen by texts");
  gen->add_flag("--partitioned", world.partitioned, "Each modality sees its own block of the latent");
  gen->add_option("--missing", world.missing_sk, "Fraction of entities without a KG link");
  gen->add_option("--kg-degree", world.kg_degree);
  gen->add_option("--kg-temperature", world.kg_temperature);
  gen->add_option("--protein-length", world.protein_length);

  RunFlags train_flags;
  std::string train_out;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint, metrics and manifest");
  add_train_flags(*train_cmd, train_flags);
  add_data_flags(*train_cmd, train_flags);
  train_cmd->add_option("--out", train_out, "Run directory")->required();

  RunFlags eval_flags;
  std::string eval_run, eval_split = "test", eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "Score a trained run on a split of its data");
  eval_cmd->add_option("--run", eval_run, "Run directory written by train")->required()->check(CLI::ExistingDirectory);
  add_data_flags(*eval_cmd, eval_flags);
  eval_cmd->add_option("--split", eval_split, "train, valid, test or all")
      ->check(CLI::IsMember({"train", "valid", "test", "all"}));
  eval_cmd->add_option("--out", eval_out, "Metrics report file");

  RunFlags predict_flags;
  std::string predict_run, pairs, predict_out;
  auto* predict = app.add_subcommand("predict", "Score entity pairs with a trained run");
  predict->add_option("--run", predict_run, "Run directory written by train")->required()->check(CLI::ExistingDirectory);
  predict->add_option("--pairs", pairs, "CSV with columns a[,b]")->required()->check(CLI::ExistingFile);
  predict->add_option("--out", predict_out, "Output CSV")->required();
  predict->add_option("--data", predict_flags.data_dir)->check(CLI::ExistingDirectory);
  predict->add_option("--drugs", predict_flags.paths.drugs)->check(CLI::ExistingFile);
  predict->add_option("--proteins", predict_flags.paths.proteins)->check(CLI::ExistingFile);

  RunFlags sweep_flags;
  std::string sweep_out;
  std::size_t sweep_seeds = 3;
  auto* sweep = app.add_subcommand("sweep-mask", "Train at each masking probability in {0, 0.05, 0.1, 0.2}");
  add_train_flags(*sweep, sweep_flags);
  add_data_flags(*sweep, sweep_flags);
  sweep->add_option("--seeds", sweep_seeds, "Runs per probability, seeds root .. root+n-1");
  sweep->add_option("--out", sweep_out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    if (*embed) return cmd_embed_kg(embed_flags, edges, entity_file, dim, dim_opt->count() > 0, embed_out, out);
    if (*gen) return cmd_gen_synthetic(world, gen_seed, gen_task, gen_out, out);
    if (*train_cmd) return cmd_train(train_flags, train_out, out, err);
    if (*eval_cmd) return cmd_eval(eval_flags, eval_run, eval_split, eval_out, out, err);
    if (*predict) return cmd_predict(predict_flags, predict_run, pairs, predict_out, out, err);
    if (*sweep) return cmd_sweep_mask(sweep_flags, sweep_seeds, sweep_out, out, err);
    return 2;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    error_record(err, "usage", 2, e.what());
    return 2;
  } catch (const UsageError& e) {
    error_record(err, "usage", 2, e.what());
    return 2;
  } catch (const data::TaskMismatch& e) {
    error_record(err, "usage", 2, e.what());
    return 2;
  } catch (const std::exception& e) {
    error_record(err, "runtime", 1, e.what());
    return 1;
  }
}

}  // namespace kedd::cli
