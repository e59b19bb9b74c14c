// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "kedd/text.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "kedd/io.hpp"

namespace kedd::text {

namespace {

bool word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

}  // namespace

std::vector<std::string> split_words(std::string_view raw) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : raw) {
    const auto c = static_cast<unsigned char>(ch);
    if (word_byte(c)) {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary::Vocabulary() : tokens_{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASKTOK]"} {}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  for (const auto& t : tokens) {
    if (t.empty()) throw std::invalid_argument("vocabulary: empty token");
    if (!v.index_.emplace(t, static_cast<std::int64_t>(v.tokens_.size())).second) {
      throw std::invalid_argument("vocabulary: duplicate token '" + t + "'");
    }
    v.tokens_.push_back(t);
  }
  return v;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, std::size_t min_freq) {
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : corpus)
    for (auto& w : split_words(doc)) ++counts[w];
  std::vector<std::string> keep;
  for (const auto& [w, c] : counts)
    if (c >= min_freq) keep.push_back(w);
  return from_tokens(keep);
}

std::int64_t Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::int64_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw std::out_of_range("vocabulary: id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> Vocabulary::words() const { return {tokens_.begin() + kNumReserved, tokens_.end()}; }

void Vocabulary::save(const std::filesystem::path& path) const {
  std::string bytes;
  for (std::size_t i = kNumReserved; i < tokens_.size(); ++i) bytes += tokens_[i] + '\n';
  io::write_atomic(path, bytes);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) tokens.push_back(line);
  }
  return from_tokens(tokens);
}

TextDocument tokenize(std::string_view raw, const Vocabulary& vocab) {
  TextDocument doc;
  doc.raw = std::string(raw);
  for (const auto& w : split_words(raw)) doc.tokens.push_back(vocab.id(w));
  return doc;
}

void TransformerConfig::validate() const {
  if (layers < 1 || heads < 1 || model_dim < 1 || ff_dim < 1) throw std::invalid_argument("transformer: dims must be >= 1");
  if (model_dim % heads != 0) throw std::invalid_argument("transformer: model_dim must be divisible by heads");
  if (max_tokens < 3) throw std::invalid_argument("transformer: max_tokens must be >= 3");
}

EncodedInput build_input(const TextDocument& a, const TextDocument* b, std::size_t max_tokens) {
  const std::size_t markers = b ? 3 : 2;
  if (max_tokens < markers) throw std::invalid_argument("build_input: max_tokens too small for markers");
  const std::size_t budget = max_tokens - markers;
  std::size_t na = a.tokens.size();
  std::size_t nb = b ? b->tokens.size() : 0;
  EncodedInput enc;
  if (na + nb > budget) {
    const std::size_t over = na + nb - budget;
    enc.dropped_b = std::min(over, nb);
    nb -= enc.dropped_b;
    enc.dropped_a = over - enc.dropped_b;
    na -= enc.dropped_a;
  }
  enc.ids.reserve(na + nb + markers);
  enc.ids.push_back(kCls);
  enc.ids.insert(enc.ids.end(), a.tokens.begin(), a.tokens.begin() + static_cast<std::ptrdiff_t>(na));
  enc.ids.push_back(kSep);
  if (b) {
    enc.ids.insert(enc.ids.end(), b->tokens.begin(), b->tokens.begin() + static_cast<std::ptrdiff_t>(nb));
    enc.ids.push_back(kSep);
  }
  return enc;
}

TextEncoder::TextEncoder(nn::ParameterStore& store, const std::string& name, TransformerConfig config,
                         std::size_t vocab_size)
    : config_(config), vocab_size_(vocab_size) {
  config_.validate();
  if (vocab_size_ < static_cast<std::size_t>(kNumReserved)) throw std::invalid_argument("text encoder: vocab too small");
  const std::size_t d = config_.model_dim;
  token_embedding_ = store.create(name + ".token_embedding", {vocab_size_, d}, nn::InitSpec::uniform(0.1));
  position_embedding_ = store.create(name + ".position_embedding", {config_.max_tokens, d}, nn::InitSpec::uniform(0.1));
  embed_norm_ = nn::LayerNorm(store, name + ".embed_norm", d);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = name + ".layers." + std::to_string(l);
    Block blk;
    blk.q = nn::Linear(store, p + ".attn.q", d, d);
    blk.k = nn::Linear(store, p + ".attn.k", d, d);
    blk.v = nn::Linear(store, p + ".attn.v", d, d);
    blk.o = nn::Linear(store, p + ".attn.o", d, d);
    blk.ln1 = nn::LayerNorm(store, p + ".ln1", d);
    blk.ff1 = nn::Linear(store, p + ".ff.0", d, config_.ff_dim);
    blk.ff2 = nn::Linear(store, p + ".ff.1", config_.ff_dim, d);
    blk.ln2 = nn::LayerNorm(store, p + ".ln2", d);
    blocks_.push_back(std::move(blk));
  }
}

Tensor TextEncoder::encode_ids(const std::vector<std::vector<std::int64_t>>& batch, std::vector<Tensor>* attention) const {
  if (batch.empty()) throw std::invalid_argument("text encoder: empty batch");
  const std::size_t B = batch.size();
  const std::size_t L = batch.front().size();
  const std::size_t d = config_.model_dim, H = config_.heads, dh = d / H;
  if (L == 0 || L > config_.max_tokens) {
    throw ad::ShapeError("text encoder: sequence length " + std::to_string(L) + " outside [1, " +
                         std::to_string(config_.max_tokens) + "]");
  }
  std::vector<std::int64_t> ids, pos;
  ids.reserve(B * L);
  pos.reserve(B * L);
  for (const auto& row : batch) {
    if (row.size() != L) throw ad::ShapeError("text encoder: ragged batch");
    for (std::size_t i = 0; i < L; ++i) {
      if (row[i] < 0 || static_cast<std::size_t>(row[i]) >= vocab_size_) {
        throw std::out_of_range("text encoder: token id " + std::to_string(row[i]) + " outside vocabulary");
      }
      ids.push_back(row[i]);
      pos.push_back(static_cast<std::int64_t>(i));
    }
  }
  // Key-padding mask broadcast over heads and queries: [B, H, L, L].
  std::vector<std::uint8_t> key_mask(B * H * L * L, 0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < L; ++j)
      if (batch[b][j] == kPad)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t i = 0; i < L; ++i) key_mask[((b * H + h) * L + i) * L + j] = 1;

  Tensor x = ad::add(ad::embedding_lookup(token_embedding_, ids), ad::embedding_lookup(position_embedding_, pos));
  x = ad::reshape(embed_norm_(x), {B, L, d});
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  auto split = [&](const Tensor& t) { return ad::transpose(ad::reshape(t, {B, L, H, dh}), 1, 2); };
  for (const auto& blk : blocks_) {
    Tensor q = split(blk.q(x)), k = split(blk.k(x)), v = split(blk.v(x));
    Tensor scores = ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt);
    Tensor probs = ad::softmax_lastdim(ad::masked_fill(scores, key_mask, -std::numeric_limits<double>::infinity()));
    if (attention) attention->push_back(probs);
    Tensor ctx = ad::reshape(ad::transpose(ad::matmul(probs, v), 1, 2), {B, L, d});
    x = blk.ln1(ad::add(x, blk.o(ctx)));
    x = blk.ln2(ad::add(x, blk.ff2(ad::gelu(blk.ff1(x)))));
  }
  std::vector<std::int64_t> cls_rows(B);
  for (std::size_t b = 0; b < B; ++b) cls_rows[b] = static_cast<std::int64_t>(b * L);
  return ad::embedding_lookup(ad::reshape(x, {B * L, d}), cls_rows);
}

Tensor TextEncoder::encode(const TextDocument& a, const TextDocument* b) const {
  auto enc = build_input(a, b, config_.max_tokens);
  return ad::reshape(encode_ids({enc.ids}), {config_.model_dim});
}

Tensor uk_feature(const Tensor& cls_vec, const nn::Linear& fc, double dropout_rate) {
  if (cls_vec.dim(-1) != fc.in_features()) {
    throw ad::ShapeError("uk_feature: input " + ad::shape_str(cls_vec.shape()) + " for projection of width " +
                         std::to_string(fc.in_features()));
  }
  return ad::dropout(fc(cls_vec), dropout_rate);
}

}  // namespace kedd::text
