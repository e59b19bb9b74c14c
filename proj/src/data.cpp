// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "kedd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "kedd/io.hpp"

namespace kedd::data {

namespace {

using nlohmann::json;

[[noreturn]] void format_error(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  throw FormatError(path.string() + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::optional<std::string> optional_string(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw std::invalid_argument(std::string("'") + key + "' must be a string");
  return it->get<std::string>();
}

std::string required_string(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) throw std::invalid_argument(std::string("missing string field '") + key + "'");
  std::string s = it->get<std::string>();
  if (s.empty()) throw std::invalid_argument(std::string("empty '") + key + "'");
  return s;
}

EntityRecord parse_drug(const json& obj) {
  EntityRecord r;
  r.id = required_string(obj, "id");
  r.kind = EntityKind::drug;
  auto atoms = obj.find("atoms");
  if (atoms == obj.end() || !atoms->is_array()) throw std::invalid_argument("missing array field 'atoms'");
  std::vector<int> z;
  for (const auto& a : *atoms) {
    if (!a.is_number_integer()) throw std::invalid_argument("atomic numbers must be integers");
    z.push_back(a.get<int>());
  }
  std::vector<structure::Bond> bonds;
  auto b = obj.find("bonds");
  if (b != obj.end()) {
    if (!b->is_array()) throw std::invalid_argument("'bonds' must be an array");
    for (const auto& t : *b) {
      if (!t.is_array() || t.size() != 3 || !t[0].is_number_unsigned() || !t[1].is_number_unsigned() ||
          !t[2].is_number_integer())
        throw std::invalid_argument("each bond must be [i, j, order]");
      bonds.push_back({t[0].get<std::size_t>(), t[1].get<std::size_t>(), t[2].get<int>()});
    }
  }
  r.structure = structure::MolecularGraph(std::move(z), std::move(bonds));
  r.kg_id = optional_string(obj, "kg_id");
  r.text = optional_string(obj, "text");
  return r;
}

EntityRecord parse_protein(const json& obj, std::size_t max_len) {
  EntityRecord r;
  r.id = required_string(obj, "id");
  r.kind = EntityKind::protein;
  r.structure = structure::ProteinSequence(required_string(obj, "sequence"), max_len);
  r.kg_id = optional_string(obj, "kg_id");
  r.text = optional_string(obj, "text");
  return r;
}

void ingest(const std::filesystem::path& path, EntityKind kind, std::size_t max_len, EntityTable& table,
            IngestionReport& report) {
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    EntityRecord r;
    try {
      json obj = json::parse(line);
      if (!obj.is_object()) throw std::invalid_argument("expected a JSON object");
      r = kind == EntityKind::drug ? parse_drug(obj) : parse_protein(obj, max_len);
      table.add(r);
    } catch (const std::exception& e) {
      format_error(path, i + 1, e.what());
    }
    if (kind == EntityKind::drug) {
      ++report.drugs;
      report.duplicate_bonds += r.graph()->duplicates_removed();
    } else {
      ++report.proteins;
      if (r.protein()->truncated()) ++report.truncated;
    }
    if (!r.text) ++report.missing_text;
    if (!r.kg_id) ++report.missing_kg;
  }
}

json common_fields(const EntityRecord& r) {
  json obj;
  obj["id"] = r.id;
  if (r.kg_id) obj["kg_id"] = *r.kg_id;
  if (r.text) obj["text"] = *r.text;
  return obj;
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::size_t EntityTable::add(EntityRecord record) {
  if (record.id.empty()) throw std::invalid_argument("entity id is empty");
  const bool is_graph = record.graph() != nullptr;
  if (is_graph != (record.kind == EntityKind::drug))
    throw std::invalid_argument("entity '" + record.id + "': kind does not match its structure");
  if (index_.count(record.id)) throw std::invalid_argument("duplicate entity id '" + record.id + "'");
  index_.emplace(record.id, records_.size());
  records_.push_back(std::move(record));
  return records_.size() - 1;
}

std::optional<std::size_t> EntityTable::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const EntityRecord& EntityTable::at(const std::string& id) const {
  auto i = index_of(id);
  if (!i) throw std::invalid_argument("unknown entity '" + id + "'");
  return records_[*i];
}

std::vector<std::string> EntityTable::ids(EntityKind kind) const {
  std::vector<std::string> out;
  for (const auto& r : records_)
    if (r.kind == kind) out.push_back(r.id);
  return out;
}

EntityTable load_entities(const std::filesystem::path& drugs_path, const std::filesystem::path& proteins_path,
                          IngestionReport* report, std::size_t max_protein_len) {
  EntityTable table;
  IngestionReport local;
  if (!drugs_path.empty()) ingest(drugs_path, EntityKind::drug, max_protein_len, table, local);
  if (!proteins_path.empty()) ingest(proteins_path, EntityKind::protein, max_protein_len, table, local);
  if (report) *report = local;
  return table;
}

std::string serialize_drugs(const EntityTable& table) {
  std::string out;
  for (const auto& r : table.records()) {
    if (r.kind != EntityKind::drug) continue;
    json obj = common_fields(r);
    obj["atoms"] = r.graph()->atoms();
    json bonds = json::array();
    for (const auto& b : r.graph()->bonds()) bonds.push_back({b.a, b.b, b.order});
    obj["bonds"] = std::move(bonds);
    out += obj.dump() + "\n";
  }
  return out;
}

std::string serialize_proteins(const EntityTable& table) {
  std::string out;
  for (const auto& r : table.records()) {
    if (r.kind != EntityKind::protein) continue;
    json obj = common_fields(r);
    obj["sequence"] = r.protein()->residues();
    out += obj.dump() + "\n";
  }
  return out;
}

void save_entities(const EntityTable& table, const std::filesystem::path& drugs_path,
                   const std::filesystem::path& proteins_path) {
  io::write_atomic(drugs_path, serialize_drugs(table));
  io::write_atomic(proteins_path, serialize_proteins(table));
}

CoverageReport link_to_kg(const EntityTable& entities, const kg::KnowledgeGraph& kg) {
  CoverageReport rep;
  for (const auto& r : entities.records()) {
    KindCoverage& c = r.kind == EntityKind::drug ? rep.drugs : rep.proteins;
    ++c.total;
    if (!r.kg_id) {
      rep.unlinked.push_back(r.id);
      continue;
    }
    if (!kg.index_of(*r.kg_id))
      throw std::invalid_argument("entity '" + r.id + "' links to '" + *r.kg_id + "', which is not in the graph");
    ++c.linked;
  }
  for (auto [name, c] : {std::pair{"drug", rep.drugs}, std::pair{"protein", rep.proteins}}) {
    if (c.total > 0 && c.linked == 0)
      rep.warnings.push_back(std::string("no ") + name + " is linked to the knowledge graph");
  }
  return rep;
}

std::vector<std::optional<std::size_t>> resolve_kg_rows(const EntityTable& entities,
                                                        const std::vector<std::string>& kg_ids) {
  std::map<std::string, std::size_t, std::less<>> rows;
  for (std::size_t i = 0; i < kg_ids.size(); ++i) rows.emplace(kg_ids[i], i);
  std::vector<std::optional<std::size_t>> out(entities.size());
  for (std::size_t i = 0; i < entities.size(); ++i) {
    const auto& r = entities[i];
    if (!r.kg_id) continue;
    auto it = rows.find(*r.kg_id);
    if (it == rows.end())
      throw std::invalid_argument("entity '" + r.id + "' links to '" + *r.kg_id + "', which has no embedding row");
    out[i] = it->second;
  }
  return out;
}

std::string to_string(SplitTag t) {
  switch (t) {
    case SplitTag::train: return "train";
    case SplitTag::valid: return "valid";
    case SplitTag::test: return "test";
    case SplitTag::none: return "none";
  }
  return "none";
}

void SampleSet::validate(const EntityTable& entities) const {
  task.validate();
  std::set<std::pair<std::string, std::string>> seen;
  const bool symmetric = task.pair() && *task.kind_b == task.kind_a;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    const std::string where = "sample " + std::to_string(i) + ": ";
    if (s.labels.size() != task.label_arity)
      throw std::invalid_argument(where + "expected " + std::to_string(task.label_arity) + " labels");
    for (auto l : s.labels)
      if (l > 1) throw std::invalid_argument(where + "labels must be 0 or 1");
    if (entities.at(s.a).kind != task.kind_a) throw std::invalid_argument(where + "'" + s.a + "' has the wrong kind");
    if (task.pair() != s.b.has_value()) throw std::invalid_argument(where + "pair arity does not match the task");
    std::pair<std::string, std::string> key{s.a, ""};
    if (s.b) {
      if (entities.at(*s.b).kind != *task.kind_b)
        throw std::invalid_argument(where + "'" + *s.b + "' has the wrong kind");
      key.second = *s.b;
      if (symmetric && key.second < key.first) std::swap(key.first, key.second);
    }
    if (!seen.insert(key).second) throw std::invalid_argument(where + "duplicate pair (" + s.a + ", " + key.second + ")");
  }
}

std::vector<std::size_t> SampleSet::indices(SplitTag tag) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == tag) out.push_back(i);
  return out;
}

SampleSet load_samples(const std::filesystem::path& path, fusion::Task task) {
  const auto lines = read_lines(path);
  if (lines.empty()) format_error(path, 1, "missing header");
  const auto header = split_commas(lines[0]);
  std::optional<std::size_t> col_a, col_b, col_group;
  std::vector<std::size_t> col_labels;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& h = header[c];
    if (h == "a") col_a = c;
    else if (h == "b") col_b = c;
    else if (h == "group") col_group = c;
    else if (h.rfind("label", 0) == 0) col_labels.push_back(c);
    else format_error(path, 1, "unknown column '" + h + "'");
  }
  if (!col_a) format_error(path, 1, "missing column 'a'");
  if (col_labels.empty()) format_error(path, 1, "no label column");
  const bool pair_task = task != fusion::Task::dp;
  if (pair_task && !col_b) throw TaskMismatch(to_string(task) + " needs a 'b' column in " + path.string());
  if (!pair_task && col_b) throw TaskMismatch("dp samples must not have a 'b' column (" + path.string() + ")");
  if (task != fusion::Task::ppi && col_labels.size() != 1)
    throw TaskMismatch(to_string(task) + " takes one label column, found " + std::to_string(col_labels.size()));

  SampleSet set;
  set.task = fusion::TaskSpec::make(task, col_labels.size());
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto cells = split_commas(lines[i]);
    if (cells.size() != header.size())
      format_error(path, i + 1, "expected " + std::to_string(header.size()) + " cells, found " + std::to_string(cells.size()));
    Sample s;
    s.a = cells[*col_a];
    if (s.a.empty()) format_error(path, i + 1, "empty 'a'");
    if (col_b) {
      if (cells[*col_b].empty()) format_error(path, i + 1, "empty 'b'");
      s.b = cells[*col_b];
    }
    for (auto c : col_labels) {
      if (cells[c] != "0" && cells[c] != "1") format_error(path, i + 1, "label '" + cells[c] + "' is not 0 or 1");
      s.labels.push_back(cells[c] == "1" ? 1 : 0);
    }
    if (col_group && !cells[*col_group].empty()) s.group = cells[*col_group];
    set.samples.push_back(std::move(s));
  }
  return set;
}

std::string serialize_samples(const SampleSet& set) {
  const bool groups = std::any_of(set.samples.begin(), set.samples.end(), [](const Sample& s) { return s.group; });
  std::string out = set.task.pair() ? "a,b" : "a";
  for (std::size_t l = 0; l < set.task.label_arity; ++l) out += l == 0 ? ",label" : ",label" + std::to_string(l + 1);
  if (groups) out += ",group";
  out += "\n";
  for (const auto& s : set.samples) {
    out += s.a;
    if (set.task.pair()) out += "," + s.b.value_or("");
    for (auto l : s.labels) out += l ? ",1" : ",0";
    if (groups) out += "," + s.group.value_or("");
    out += "\n";
  }
  return out;
}

void save_samples(const SampleSet& set, const std::filesystem::path& path) {
  io::write_atomic(path, serialize_samples(set));
}

std::string to_string(SplitMode m) {
  switch (m) {
    case SplitMode::random: return "random";
    case SplitMode::warm: return "warm";
    case SplitMode::cold_drug: return "cold_drug";
    case SplitMode::cold_protein: return "cold_protein";
    case SplitMode::cold_cluster: return "cold_cluster";
    case SplitMode::precomputed: return "precomputed";
  }
  return "warm";
}

SplitMode parse_split_mode(const std::string& s) {
  for (auto m : {SplitMode::random, SplitMode::warm, SplitMode::cold_drug, SplitMode::cold_protein,
                 SplitMode::cold_cluster, SplitMode::precomputed})
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown split mode '" + s + "'");
}

void SplitSpec::validate() const {
  if (train < 0 || valid < 0 || test < 0) throw std::invalid_argument("split ratios must be non-negative");
  if (std::abs(train + valid + test - 1.0) > 1e-9) throw std::invalid_argument("split ratios must sum to 1");
  if (mode == SplitMode::cold_cluster) {
    const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(folds))));
    if (folds < 4 || g * g != folds) throw std::invalid_argument("cold_cluster folds must be a perfect square >= 4");
    if (fold >= folds) throw std::invalid_argument("fold index out of range");
  }
}

namespace {

std::size_t ratio_count(double r, std::size_t n) {
  return static_cast<std::size_t>(std::llround(r * static_cast<double>(n)));
}

// Distinct entity ids of `kind` across samples, sorted then shuffled.
std::vector<std::string> shuffled_entities(const SampleSet& set, EntityKind kind, std::uint64_t seed) {
  std::set<std::string> ids;
  for (const auto& s : set.samples) {
    if (set.task.kind_a == kind) ids.insert(s.a);
    if (set.task.kind_b == kind && s.b) ids.insert(*s.b);
  }
  std::vector<std::string> out(ids.begin(), ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

void split_cold(SampleSet& set, const SplitSpec& spec, EntityKind kind) {
  const bool a_side = set.task.kind_a == kind;
  const bool b_side = set.task.kind_b == kind;
  if (!a_side && !b_side)
    throw std::invalid_argument(to_string(spec.mode) + " is infeasible for task " + fusion::to_string(set.task.task));
  const auto ids = shuffled_entities(set, kind, spec.seed);
  const std::size_t m = ids.size();
  if (m < 2) throw std::invalid_argument(to_string(spec.mode) + " needs at least 2 distinct " + fusion::to_string(kind) + "s");
  const std::size_t n_test = std::max<std::size_t>(1, ratio_count(spec.test, m));
  if (n_test >= m) throw std::invalid_argument(to_string(spec.mode) + " leaves no training entities");
  const std::size_t n_valid = std::min(ratio_count(spec.valid, m), m - n_test - 1);
  std::map<std::string, SplitTag, std::less<>> tag;
  for (std::size_t i = 0; i < m; ++i)
    tag[ids[i]] = i < n_test ? SplitTag::test : i < n_test + n_valid ? SplitTag::valid : SplitTag::train;
  auto held = [](SplitTag x, SplitTag y) { return static_cast<int>(x) > static_cast<int>(y) ? x : y; };
  for (auto& s : set.samples) {
    SplitTag t = SplitTag::train;
    if (a_side) t = held(t, tag.at(s.a));
    if (b_side && s.b) t = held(t, tag.at(*s.b));
    s.split = t;
  }
}

}  // namespace

std::vector<Fold> cold_cluster_folds(const SampleSet& set, const SplitSpec& spec) {
  spec.validate();
  if (set.task.task != fusion::Task::dti) throw std::invalid_argument("cold_cluster needs a drug-protein task");
  const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(spec.folds))));
  const auto drugs = shuffled_entities(set, EntityKind::drug, spec.seed);
  const auto proteins = shuffled_entities(set, EntityKind::protein, mix(spec.seed, 1));
  if (drugs.size() < g || proteins.size() < g)
    throw std::invalid_argument("cold_cluster needs at least " + std::to_string(g) + " drugs and proteins");
  std::map<std::string, std::size_t, std::less<>> group;
  for (std::size_t i = 0; i < drugs.size(); ++i) group["d:" + drugs[i]] = i % g;
  for (std::size_t i = 0; i < proteins.size(); ++i) group["p:" + proteins[i]] = i % g;

  std::vector<Fold> folds(spec.folds);
  for (std::size_t f = 0; f < spec.folds; ++f) {
    const std::size_t gi = f / g, gj = f % g;
    std::vector<std::size_t> pool;
    for (std::size_t s = 0; s < set.samples.size(); ++s) {
      const auto da = group.at("d:" + set.samples[s].a);
      const auto pb = group.at("p:" + *set.samples[s].b);
      if (da == gi && pb == gj) folds[f].test.push_back(s);
      else if (da != gi && pb != gj) pool.push_back(s);
    }
    std::mt19937_64 rng(mix(spec.seed, 100 + f));
    std::shuffle(pool.begin(), pool.end(), rng);
    const double denom = spec.train + spec.valid;
    const std::size_t n_valid = denom > 0 ? ratio_count(spec.valid / denom, pool.size()) : 0;
    folds[f].valid.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_valid));
    folds[f].train.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_valid), pool.end());
    for (auto* v : {&folds[f].train, &folds[f].valid}) std::sort(v->begin(), v->end());
  }
  return folds;
}

void split_dataset(SampleSet& set, const SplitSpec& spec) {
  spec.validate();
  switch (spec.mode) {
    case SplitMode::random:
    case SplitMode::warm: {
      std::vector<std::size_t> order(set.samples.size());
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 rng(spec.seed);
      std::shuffle(order.begin(), order.end(), rng);
      const std::size_t n_test = ratio_count(spec.test, order.size());
      const std::size_t n_valid = std::min(ratio_count(spec.valid, order.size()), order.size() - n_test);
      for (std::size_t i = 0; i < order.size(); ++i)
        set.samples[order[i]].split = i < n_test ? SplitTag::test : i < n_test + n_valid ? SplitTag::valid : SplitTag::train;
      return;
    }
    case SplitMode::cold_drug: split_cold(set, spec, EntityKind::drug); return;
    case SplitMode::cold_protein: split_cold(set, spec, EntityKind::protein); return;
    case SplitMode::cold_cluster: {
      const auto folds = cold_cluster_folds(set, spec);
      for (auto& s : set.samples) s.split = SplitTag::none;
      const Fold& f = folds[spec.fold];
      for (auto i : f.train) set.samples[i].split = SplitTag::train;
      for (auto i : f.valid) set.samples[i].split = SplitTag::valid;
      for (auto i : f.test) set.samples[i].split = SplitTag::test;
      return;
    }
    case SplitMode::precomputed:
      for (std::size_t i = 0; i < set.samples.size(); ++i) {
        const auto& g = set.samples[i].group;
        if (g == "train") set.samples[i].split = SplitTag::train;
        else if (g == "valid") set.samples[i].split = SplitTag::valid;
        else if (g == "test") set.samples[i].split = SplitTag::test;
        else throw std::invalid_argument("sample " + std::to_string(i) + ": group must be train, valid, or test");
      }
      return;
  }
}

kg::KnowledgeGraph filter_leakage(const kg::KnowledgeGraph& graph, const SampleSet& set, const EntityTable& entities,
                                  std::size_t* removed) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& s : set.samples) {
    if (!s.b || (s.split != SplitTag::valid && s.split != SplitTag::test)) continue;
    const auto& ka = entities.at(s.a).kg_id;
    const auto& kb = entities.at(*s.b).kg_id;
    if (!ka || !kb) continue;
    auto ia = graph.index_of(*ka), ib = graph.index_of(*kb);
    if (!ia || !ib) throw std::invalid_argument("sample (" + s.a + ", " + *s.b + ") links outside the graph");
    pairs.emplace_back(*ia, *ib);
  }
  kg::KnowledgeGraph out = graph;
  const std::size_t n = out.remove_pairs(pairs);
  if (removed) *removed = n;
  return out;
}

// ---------------------------------------------------------------------------
// Generated worlds

void SyntheticConfig::validate() const {
  fusion::TaskSpec::make(task, label_arity).validate();
  if (label_arity < 1) throw std::invalid_argument("label_arity must be >= 1");
  if (drugs < 2) throw std::invalid_argument("need at least 2 drugs");
  if ((task == fusion::Task::dti || task == fusion::Task::ppi) && proteins < 2)
    throw std::invalid_argument("need at least 2 proteins");
  if (latent_dim < 1 || latent_dim > 24) throw std::invalid_argument("latent_dim must be in [1, 24]");
  if (partitioned && latent_dim < 3) throw std::invalid_argument("partitioned worlds need latent_dim >= 3");
  for (double w : {w_struct, w_kg, w_text})
    if (w < 0 || w > 1) throw std::invalid_argument("signal weights must be in [0, 1]");
  if (missing_sk < 0 || missing_sk > 1) throw std::invalid_argument("missing_sk must be in [0, 1]");
  if (kg_temperature <= 0) throw std::invalid_argument("kg_temperature must be positive");
  if (protein_length < 1) throw std::invalid_argument("protein_length must be positive");
}

std::uint64_t World::content_hash() const {
  std::uint64_t h = io::fnv1a(serialize_drugs(entities));
  h = io::fnv1a(serialize_proteins(entities), h);
  h = io::fnv1a(serialize_samples(samples), h);
  const std::uint64_t g = kg.hash();
  return io::fnv1a(std::string_view(reinterpret_cast<const char*>(&g), sizeof g), h);
}

void World::write(const std::filesystem::path& dir) const {
  save_entities(entities, dir / "drugs.jsonl", dir / "proteins.jsonl");
  kg::save_kg(kg, dir / "kg_edges.tsv", dir / "kg_entities.txt");
  save_samples(samples, dir / "samples.csv");
}

namespace {

constexpr double kQuartile = 0.6744897501960817;

int quartile_bin(double v) { return v < -kQuartile ? 0 : v < 0 ? 1 : v < kQuartile ? 2 : 3; }

struct View {
  std::vector<std::size_t> dims;  // latent coordinates the modality observes
  double w = 0;
};

std::vector<double> observe(const std::vector<double>& z, const View& view, std::mt19937_64& rng) {
  std::normal_distribution<double> noise;
  const double s = std::sqrt(1.0 - view.w * view.w);
  std::vector<double> o;
  for (auto d : view.dims) o.push_back(view.w * z[d] + s * noise(rng));
  return o;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::string padded_id(char prefix, std::size_t i, std::size_t n) {
  std::string num = std::to_string(i);
  const std::size_t width = std::to_string(n).size();
  return std::string(1, prefix) + std::string(width > num.size() ? width - num.size() : 0, '0') + num;
}

// Backbone chain of carbons; each observed coordinate hangs a pendant atom
// whose element codes (coordinate, quartile).
structure::MolecularGraph make_molecule(const std::vector<double>& o, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(3, 8);
  const int backbone = len(rng);
  std::vector<int> atoms(backbone, 6);
  std::vector<structure::Bond> bonds;
  std::bernoulli_distribution doubled(0.2);
  for (int i = 1; i < backbone; ++i)
    bonds.push_back({std::size_t(i - 1), std::size_t(i), doubled(rng) ? 2 : 1});
  std::uniform_int_distribution<std::size_t> anchor(0, backbone - 1);
  for (std::size_t j = 0; j < o.size(); ++j) {
    atoms.push_back(20 + 4 * static_cast<int>(j) + quartile_bin(o[j]));
    bonds.push_back({anchor(rng), atoms.size() - 1, 1});
  }
  std::uniform_int_distribution<int> extras(0, 2);
  const int n_extra = extras(rng);
  for (int i = 0; i < n_extra; ++i) {
    atoms.push_back(i % 2 ? 7 : 8);
    bonds.push_back({anchor(rng), atoms.size() - 1, 1});
  }
  return structure::MolecularGraph(std::move(atoms), std::move(bonds));
}

constexpr std::string_view kMotifResidues = "CDEFHIKLMNPQRVWY";
constexpr std::string_view kBackgroundResidues = "AGST";

std::vector<std::string> motif_codebook(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, kMotifResidues.size() - 1);
  std::set<std::string> used;
  std::vector<std::string> out;
  while (out.size() < n) {
    std::string m{kMotifResidues[pick(rng)], kMotifResidues[pick(rng)], kMotifResidues[pick(rng)]};
    if (used.insert(m).second) out.push_back(m);
  }
  return out;
}

// Background residues with one motif per observed coordinate at random gaps.
std::string make_sequence(const std::vector<double>& o, const std::vector<std::string>& codebook, std::size_t length,
                          std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> bg(0, kBackgroundResidues.size() - 1);
  std::uniform_int_distribution<int> gap(1, 3);
  std::vector<std::size_t> order(o.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::string seq;
  for (auto j : order) {
    for (int g = gap(rng); g > 0; --g) seq += kBackgroundResidues[bg(rng)];
    seq += codebook[4 * j + static_cast<std::size_t>(quartile_bin(o[j]))];
  }
  while (seq.size() < length) seq += kBackgroundResidues[bg(rng)];
  return seq;
}

const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words = {"compound", "protein", "binds", "reported", "activity", "observed",
                                                 "pathway", "human",   "assay", "expression", "known", "target"};
  return words;
}

std::string make_text(const std::vector<double>& o, std::mt19937_64& rng) {
  std::vector<std::string> words;
  for (std::size_t j = 0; j < o.size(); ++j) words.push_back("z" + std::to_string(j) + "q" + std::to_string(quartile_bin(o[j])));
  std::uniform_int_distribution<std::size_t> pick(0, filler_words().size() - 1);
  for (int i = 0; i < 4; ++i) words.push_back(filler_words()[pick(rng)]);
  std::shuffle(words.begin(), words.end(), rng);
  std::string out;
  for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
  return out;
}

}  // namespace

World gen_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const std::size_t h = cfg.latent_dim;
  const bool uses_proteins = cfg.task == fusion::Task::dti || cfg.task == fusion::Task::ppi;
  const bool uses_drugs = cfg.task != fusion::Task::ppi;
  const std::size_t n_d = uses_drugs ? cfg.drugs : 0;
  const std::size_t n_p = uses_proteins ? cfg.proteins : 0;
  const std::size_t n = n_d + n_p;

  World world;
  std::mt19937_64 rng(mix(cfg.seed, 0));
  std::normal_distribution<double> normal;
  world.latent.assign(n, std::vector<double>(h));
  for (auto& z : world.latent)
    for (auto& v : z) v = normal(rng);

  View views[3];  // structure, kg, text
  const double weights[3] = {cfg.w_struct, cfg.w_kg, cfg.w_text};
  for (std::size_t m = 0; m < 3; ++m) {
    views[m].w = weights[m];
    for (std::size_t d = 0; d < h; ++d)
      if (!cfg.partitioned || d * 3 / h == m) views[m].dims.push_back(d);
  }
  std::vector<std::vector<double>> obs[3];
  for (std::size_t m = 0; m < 3; ++m) {
    std::mt19937_64 r(mix(cfg.seed, 10 + m));
    for (const auto& z : world.latent) obs[m].push_back(observe(z, views[m], r));
  }

  // Entities.
  std::mt19937_64 srng(mix(cfg.seed, 20));
  const auto codebook = motif_codebook(4 * h, mix(cfg.seed, 21));
  std::vector<bool> linked(n, true);
  for (auto [kind, offset, count] : {std::tuple{EntityKind::drug, std::size_t{0}, n_d},
                                     std::tuple{EntityKind::protein, n_d, n_p}}) {
    const auto strip = static_cast<std::size_t>(std::floor(cfg.missing_sk * static_cast<double>(count) + 1e-9));
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), offset);
    std::mt19937_64 mrng(mix(cfg.seed, 30 + static_cast<std::uint64_t>(kind)));
    std::shuffle(order.begin(), order.end(), mrng);
    for (std::size_t i = 0; i < strip; ++i) linked[order[i]] = false;
  }
  for (std::size_t i = 0; i < n; ++i) {
    EntityRecord r;
    const bool drug = i < n_d;
    r.kind = drug ? EntityKind::drug : EntityKind::protein;
    r.id = drug ? padded_id('D', i, n_d) : padded_id('P', i - n_d, n_p);
    if (drug) r.structure = make_molecule(obs[0][i], srng);
    else r.structure = structure::ProteinSequence(make_sequence(obs[0][i], codebook, cfg.protein_length, srng));
    if (linked[i]) r.kg_id = (drug ? "chem:" : "gene:") + r.id;
    r.text = make_text(obs[2][i], srng);
    world.entities.add(std::move(r));
  }

  // Knowledge graph over linked entities: each samples kg_degree partners with
  // probability proportional to exp(cos / temperature) of the KG view.
  std::vector<std::size_t> nodes;
  for (std::size_t i = 0; i < n; ++i)
    if (linked[i]) nodes.push_back(i);
  for (auto i : nodes) world.kg.add_entity(*world.entities[i].kg_id);
  if (nodes.size() > 1 && !views[1].dims.empty()) {
    std::vector<double> norms(n);
    for (auto i : nodes) norms[i] = std::sqrt(dot(obs[1][i], obs[1][i])) + 1e-12;
    std::mt19937_64 krng(mix(cfg.seed, 40));
    std::set<std::pair<std::size_t, std::size_t>> edges;
    auto relation = [&](std::size_t a, std::size_t b) {
      const bool da = a < n_d, db = b < n_d;
      return da && db ? "drug_drug" : !da && !db ? "protein_protein" : "drug_target";
    };
    for (std::size_t u = 0; u < nodes.size(); ++u) {
      const std::size_t i = nodes[u];
      std::vector<double> w(nodes.size());
      for (std::size_t v = 0; v < nodes.size(); ++v) {
        const std::size_t j = nodes[v];
        w[v] = j == i ? 0.0 : std::exp(dot(obs[1][i], obs[1][j]) / (norms[i] * norms[j]) / cfg.kg_temperature);
      }
      std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
      for (std::size_t e = 0; e < cfg.kg_degree; ++e) {
        const std::size_t v = pick(krng);
        const auto key = std::minmax(u, v);
        if (edges.insert(key).second) world.kg.add_edge(u, relation(i, nodes[v]), v);
      }
    }
  }

  // Samples with labels from the latent geometry.
  SampleSet& set = world.samples;
  set.task = fusion::TaskSpec::make(cfg.task, cfg.label_arity);
  std::mt19937_64 prng(mix(cfg.seed, 50));
  std::vector<std::vector<double>> projections;  // PPI: one [h x h] map per label; DP: one direction per label
  for (std::size_t l = 0; l < cfg.label_arity; ++l) {
    std::vector<double> p(cfg.task == fusion::Task::dp ? h : h * h);
    for (auto& v : p) v = normal(prng);
    projections.push_back(std::move(p));
  }
  auto project = [&](const std::vector<double>& z, const std::vector<double>& p) {
    std::vector<double> out(h, 0.0);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < h; ++c) out[r] += p[r * h + c] * z[c];
    return out;
  };
  auto make_sample = [&](std::size_t a, std::optional<std::size_t> b) {
    Sample s;
    s.a = world.entities[a].id;
    if (b) s.b = world.entities[*b].id;
    for (std::size_t l = 0; l < cfg.label_arity; ++l) {
      double score = 0;
      if (cfg.task == fusion::Task::dp) score = dot(world.latent[a], projections[l]);
      else if (cfg.task == fusion::Task::ppi)
        score = dot(project(world.latent[a], projections[l]), project(world.latent[*b], projections[l]));
      else score = dot(world.latent[a], world.latent[*b]);
      s.labels.push_back(score > 0 ? 1 : 0);
    }
    set.samples.push_back(std::move(s));
  };

  if (cfg.task == fusion::Task::dp) {
    for (std::size_t i = 0; i < n_d; ++i) make_sample(i, std::nullopt);
  } else {
    std::size_t lo_a = 0, hi_a = n_d, lo_b = n_d, hi_b = n;  // DTI
    if (cfg.task == fusion::Task::ddi) { lo_b = 0; hi_b = n_d; }
    if (cfg.task == fusion::Task::ppi) { lo_a = 0; hi_a = n_p; lo_b = 0; hi_b = n_p; }
    const bool symmetric = cfg.task != fusion::Task::dti;
    const std::size_t na = hi_a - lo_a, nb = hi_b - lo_b;
    const std::size_t capacity = symmetric ? na * (na - 1) / 2 : na * nb;
    if (cfg.samples > capacity)
      throw std::invalid_argument("requested " + std::to_string(cfg.samples) + " samples but only " +
                                  std::to_string(capacity) + " distinct pairs exist");
    std::uniform_int_distribution<std::size_t> pa(lo_a, hi_a - 1), pb(lo_b, hi_b - 1);
    std::set<std::pair<std::size_t, std::size_t>> seen;
    while (set.samples.size() < cfg.samples) {
      std::size_t a = pa(prng), b = pb(prng);
      if (symmetric) {
        if (a == b) continue;
        if (b < a) std::swap(a, b);
      }
      if (!seen.insert({a, b}).second) continue;
      make_sample(a, b);
    }
  }
  return world;
}

}  // namespace kedd::data
