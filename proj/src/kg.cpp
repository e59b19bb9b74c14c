// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "kedd/kg.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "kedd/io.hpp"

namespace kedd::kg {

namespace {

constexpr char kMagic[8] = {'K', 'E', 'D', 'D', 'E', 'M', 'B', '1'};

Eigen::MatrixXd orthonormal_basis(const Eigen::MatrixXd& y) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
  return qr.householderQ() * Eigen::MatrixXd::Identity(y.rows(), y.cols());
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph container

std::size_t KnowledgeGraph::add_entity(const std::string& id) {
  if (id.empty()) throw std::invalid_argument("knowledge graph: empty entity id");
  auto [it, inserted] = index_.emplace(id, ids_.size());
  if (inserted) ids_.push_back(id);
  return it->second;
}

void KnowledgeGraph::add_edge(const std::string& head, const std::string& relation, const std::string& tail) {
  auto h = index_of(head), t = index_of(tail);
  if (!h) throw std::invalid_argument("knowledge graph: unknown head entity '" + head + "'");
  if (!t) throw std::invalid_argument("knowledge graph: unknown tail entity '" + tail + "'");
  edges_.push_back({*h, relation, *t});
}

void KnowledgeGraph::add_edge(std::size_t head, const std::string& relation, std::size_t tail) {
  if (head >= ids_.size() || tail >= ids_.size()) throw std::out_of_range("knowledge graph: edge endpoint out of range");
  edges_.push_back({head, relation, tail});
}

std::optional<std::size_t> KnowledgeGraph::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::map<std::pair<std::size_t, std::size_t>, double> KnowledgeGraph::weighted_pairs() const {
  std::map<std::pair<std::size_t, std::size_t>, double> out;
  for (const auto& e : edges_) out[{std::min(e.head, e.tail), std::max(e.head, e.tail)}] += 1.0;
  return out;
}

std::uint64_t KnowledgeGraph::hash() const {
  std::uint64_t h = io::fnv1a("kg");
  for (const auto& id : ids_) h = io::fnv1a(std::string_view(id.c_str(), id.size() + 1), h);
  for (const auto& e : edges_) {
    std::string rec = std::to_string(e.head) + '\t' + e.relation + '\t' + std::to_string(e.tail) + '\n';
    h = io::fnv1a(rec, h);
  }
  return h;
}

std::size_t KnowledgeGraph::remove_pairs(const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  std::set<std::pair<std::size_t, std::size_t>> drop;
  for (auto [a, b] : pairs) drop.insert({std::min(a, b), std::max(a, b)});
  const auto before = edges_.size();
  std::erase_if(edges_, [&](const Triple& e) { return drop.count({std::min(e.head, e.tail), std::max(e.head, e.tail)}) > 0; });
  return before - edges_.size();
}

KnowledgeGraph load_kg(const std::filesystem::path& edge_file, const std::filesystem::path* entity_file) {
  KnowledgeGraph kg;
  if (entity_file) {
    std::ifstream in(*entity_file);
    if (!in) throw std::runtime_error("cannot open entity file " + entity_file->string());
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      kg.add_entity(split_tabs(line)[0]);
    }
  }
  std::ifstream in(edge_file);
  if (!in) throw std::runtime_error("cannot open edge file " + edge_file.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto cols = split_tabs(line);
    if (cols.size() != 3 || cols[0].empty() || cols[2].empty()) {
      throw std::runtime_error(edge_file.string() + ":" + std::to_string(lineno) + ": expected head<TAB>relation<TAB>tail");
    }
    if (!entity_file) {
      kg.add_entity(cols[0]);
      kg.add_entity(cols[2]);
    }
    try {
      kg.add_edge(cols[0], cols[1], cols[2]);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(edge_file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return kg;
}

void save_kg(const KnowledgeGraph& kg, const std::filesystem::path& edge_file, const std::filesystem::path& entity_file) {
  std::ostringstream ents, edges;
  for (const auto& id : kg.entity_ids()) ents << id << '\n';
  for (const auto& e : kg.edges()) edges << kg.entity_ids()[e.head] << '\t' << e.relation << '\t' << kg.entity_ids()[e.tail] << '\n';
  io::write_atomic(entity_file, ents.str());
  io::write_atomic(edge_file, edges.str());
}

// ---------------------------------------------------------------------------
// Matrices

void ProneConfig::validate() const {
  if (dim < 1) throw std::invalid_argument("prone: dim must be >= 1");
  if (!(negative_shift > 0.0)) throw std::invalid_argument("prone: negative_shift must be > 0");
}

GraphMatrices build_sparse_matrices(const KnowledgeGraph& kg) {
  const std::size_t n = kg.num_entities();
  if (n == 0) throw std::invalid_argument("build_sparse_matrices: empty graph");
  std::vector<Eigen::Triplet<double>> trip;
  Eigen::VectorXd deg = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (const auto& [pair, w] : kg.weighted_pairs()) {
    const auto i = static_cast<int>(pair.first), j = static_cast<int>(pair.second);
    trip.emplace_back(i, j, w);
    deg[i] += w;
    if (i != j) {
      trip.emplace_back(j, i, w);
      deg[j] += w;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (deg[static_cast<Eigen::Index>(i)] == 0.0) {
      trip.emplace_back(static_cast<int>(i), static_cast<int>(i), 1.0);
      deg[static_cast<Eigen::Index>(i)] = 1.0;
    }
  }
  GraphMatrices g;
  const auto ni = static_cast<Eigen::Index>(n);
  g.adjacency.resize(ni, ni);
  g.adjacency.setFromTriplets(trip.begin(), trip.end());
  g.degrees = deg;
  Eigen::VectorXd inv = deg.cwiseInverse();
  Eigen::VectorXd inv_sqrt = deg.cwiseSqrt().cwiseInverse();
  g.transition = inv.asDiagonal() * g.adjacency;
  SparseMatrix norm = inv_sqrt.asDiagonal() * g.adjacency * inv_sqrt.asDiagonal();
  SparseMatrix eye(ni, ni);
  eye.setIdentity();
  g.laplacian = eye - norm;
  return g;
}

SparseMatrix log_ratio_matrix(const GraphMatrices& g, double negative_shift) {
  const double total = g.degrees.sum();
  std::vector<Eigen::Triplet<double>> trip;
  for (Eigen::Index i = 0; i < g.transition.outerSize(); ++i) {
    for (SparseMatrix::InnerIterator it(g.transition, i); it; ++it) {
      const double v = std::log(it.value()) - std::log(negative_shift * g.degrees[it.col()] / total);
      if (v > 0.0) trip.emplace_back(static_cast<int>(i), static_cast<int>(it.col()), v);
    }
  }
  SparseMatrix m(g.transition.rows(), g.transition.cols());
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

TsvdResult randomized_tsvd(const SparseMatrix& m, std::size_t rank, std::size_t oversampling, std::size_t power_iters,
                           std::uint64_t seed) {
  const auto rows = m.rows(), cols = m.cols();
  const auto cap = std::min(rows, cols);
  if (rank < 1 || static_cast<Eigen::Index>(rank) > cap) {
    throw std::invalid_argument("tsvd: rank " + std::to_string(rank) + " exceeds matrix size " + std::to_string(cap));
  }
  const Eigen::Index l = std::min<Eigen::Index>(cap, static_cast<Eigen::Index>(rank + oversampling));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd omega(cols, l);
  for (Eigen::Index j = 0; j < l; ++j)
    for (Eigen::Index i = 0; i < cols; ++i) omega(i, j) = normal(rng);
  Eigen::MatrixXd q = orthonormal_basis(m * omega);
  for (std::size_t it = 0; it < power_iters; ++it) {
    Eigen::MatrixXd z = orthonormal_basis(m.transpose() * q);
    q = orthonormal_basis(m * z);
  }
  Eigen::MatrixXd b = q.transpose() * m;  // l x cols
  Eigen::BDCSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto r = static_cast<Eigen::Index>(rank);
  TsvdResult out;
  out.u = q * svd.matrixU().leftCols(r);
  out.s = svd.singularValues().head(r);
  out.v = svd.matrixV().leftCols(r);
  return out;
}

// ---------------------------------------------------------------------------
// Embedding matrix

Eigen::MatrixXd EmbeddingMatrix::to_eigen() const {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < dim; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = at(r, c);
  return m;
}

EmbeddingMatrix EmbeddingMatrix::from_eigen(const Eigen::MatrixXd& m, bool frozen) {
  EmbeddingMatrix e;
  e.rows = static_cast<std::size_t>(m.rows());
  e.dim = static_cast<std::size_t>(m.cols());
  e.frozen = frozen;
  e.values.resize(e.rows * e.dim);
  for (std::size_t r = 0; r < e.rows; ++r)
    for (std::size_t c = 0; c < e.dim; ++c)
      e.values[r * e.dim + c] = m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  return e;
}

ad::Tensor EmbeddingMatrix::to_tensor() const { return ad::Tensor::from({rows, dim}, values, false); }

// ---------------------------------------------------------------------------
// Stages

EmbeddingMatrix factorize_tsvd(const KnowledgeGraph& kg, const ProneConfig& config, TsvdResult* tsvd) {
  config.validate();
  if (config.dim > kg.num_entities()) {
    throw std::invalid_argument("factorize_tsvd: dim " + std::to_string(config.dim) + " exceeds entity count " +
                                std::to_string(kg.num_entities()));
  }
  const auto g = build_sparse_matrices(kg);
  const auto m = log_ratio_matrix(g, config.negative_shift);
  auto res = randomized_tsvd(m, config.dim, config.tsvd_oversampling, config.tsvd_power_iters, config.seed);
  Eigen::MatrixXd r = res.u * res.s.cwiseSqrt().asDiagonal();
  if (tsvd) *tsvd = std::move(res);
  return EmbeddingMatrix::from_eigen(r);
}

std::vector<double> chebyshev_coefficients(const ProneConfig& config, std::size_t nodes) {
  const double mu = config.filter_center, theta = config.filter_sharpness;
  auto g = [&](double lambda) { return std::exp(-0.5 * ((lambda - mu) * (lambda - mu) - 1.0) * theta); };
  std::vector<double> c(config.chebyshev_order + 1, 0.0);
  for (std::size_t j = 0; j < nodes; ++j) {
    const double t = std::numbers::pi * (static_cast<double>(j) + 0.5) / static_cast<double>(nodes);
    const double gx = g(std::cos(t) + 1.0);
    for (std::size_t k = 0; k < c.size(); ++k) c[k] += gx * std::cos(static_cast<double>(k) * t);
  }
  for (auto& v : c) v *= 2.0 / static_cast<double>(nodes);
  c[0] *= 0.5;
  return c;
}

Eigen::MatrixXd propagate_raw(const GraphMatrices& g, const Eigen::MatrixXd& base, const std::vector<double>& coeffs) {
  if (base.rows() != g.adjacency.rows()) {
    throw ad::ShapeError("spectral_propagate: base has " + std::to_string(base.rows()) + " rows for " +
                         std::to_string(g.adjacency.rows()) + " entities");
  }
  if (coeffs.empty()) throw std::invalid_argument("spectral_propagate: no filter coefficients");
  SparseMatrix eye(g.laplacian.rows(), g.laplacian.cols());
  eye.setIdentity();
  const SparseMatrix x = g.laplacian - eye;  // spectrum in [-1, 1]
  Eigen::MatrixXd t_prev = base;
  Eigen::MatrixXd filtered = coeffs[0] * t_prev;
  if (coeffs.size() > 1) {
    Eigen::MatrixXd t_cur = x * base;
    filtered += coeffs[1] * t_cur;
    for (std::size_t k = 2; k < coeffs.size(); ++k) {
      Eigen::MatrixXd t_next = 2.0 * (x * t_cur) - t_prev;
      filtered += coeffs[k] * t_next;
      t_prev = std::move(t_cur);
      t_cur = std::move(t_next);
    }
  }
  return g.transition * filtered;
}

void normalize_columns(Eigen::MatrixXd& m) {
  const double n = static_cast<double>(m.rows());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    auto col = m.col(c);
    col.array() -= col.mean();
    const double var = col.squaredNorm() / n;
    if (var > 1e-24) {
      col /= std::sqrt(var);
    } else {
      col.setZero();
    }
  }
}

EmbeddingMatrix spectral_propagate(const EmbeddingMatrix& base, const KnowledgeGraph& kg, const ProneConfig& config) {
  config.validate();
  const auto g = build_sparse_matrices(kg);
  Eigen::MatrixXd r = propagate_raw(g, base.to_eigen(), chebyshev_coefficients(config));
  normalize_columns(r);
  return EmbeddingMatrix::from_eigen(r, base.frozen);
}

EmbeddingMatrix embed_graph(const KnowledgeGraph& kg, const ProneConfig& config) {
  auto e = spectral_propagate(factorize_tsvd(kg, config), kg, config);
  for (double v : e.values) {
    if (!std::isfinite(v)) throw std::runtime_error("embed_graph: non-finite embedding value");
  }
  e.frozen = true;
  return e;
}

// ---------------------------------------------------------------------------
// Files

void save_embedding(const std::filesystem::path& path, const EmbeddingMatrix& e, const std::vector<std::string>& ids,
                    const ProneConfig& config, std::uint64_t graph_hash) {
  if (ids.size() != e.rows) throw std::invalid_argument("save_embedding: id count differs from row count");
  std::string bytes(kMagic, sizeof kMagic);
  auto put_u64 = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put_u64(e.rows);
  put_u64(e.dim);
  for (double v : e.values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_u64(bits);
  }
  std::string id_text;
  for (const auto& id : ids) id_text += id + '\n';
  nlohmann::json manifest = {
      {"format", "KEDDEMB1"},
      {"rows", e.rows},
      {"dim", e.dim},
      {"frozen", e.frozen},
      {"graph_hash", io::hex64(graph_hash)},
      {"seed", config.seed},
      {"config",
       {{"dim", config.dim},
        {"negative_shift", config.negative_shift},
        {"filter_center", config.filter_center},
        {"filter_sharpness", config.filter_sharpness},
        {"chebyshev_order", config.chebyshev_order},
        {"tsvd_oversampling", config.tsvd_oversampling},
        {"tsvd_power_iters", config.tsvd_power_iters}}},
  };
  io::write_atomic(path, bytes);
  io::write_atomic(path.string() + ".ids", id_text);
  io::write_atomic(path.string() + ".manifest.json", manifest.dump(2) + "\n");
}

EmbeddingMatrix load_embedding(const std::filesystem::path& path, std::vector<std::string>* ids) {
  const std::string bytes = io::read_file(path);
  if (bytes.size() < 24 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error(path.string() + ": not an embedding file");
  }
  std::size_t pos = 8;
  auto get_u64 = [&] {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 8;
    return v;
  };
  EmbeddingMatrix e;
  e.rows = get_u64();
  e.dim = get_u64();
  if (bytes.size() != 24 + 8 * e.rows * e.dim) throw std::runtime_error(path.string() + ": truncated embedding file");
  e.values.resize(e.rows * e.dim);
  for (auto& v : e.values) {
    const std::uint64_t bits = get_u64();
    std::memcpy(&v, &bits, sizeof v);
  }
  e.frozen = true;
  if (ids) {
    ids->clear();
    std::istringstream in(io::read_file(path.string() + ".ids"));
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) ids->push_back(line);
    if (ids->size() != e.rows) throw std::runtime_error(path.string() + ".ids: expected " + std::to_string(e.rows) + " ids");
  }
  return e;
}

}  // namespace kedd::kg
