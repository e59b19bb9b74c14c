// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Word-level tokenizer, vocabulary, and a small post-LN transformer whose
// [CLS] state summarizes a text description (or a [SEP]-joined pair).

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kedd/nn.hpp"

namespace kedd::text {

using ad::Tensor;

inline constexpr std::int64_t kPad = 0;
inline constexpr std::int64_t kUnk = 1;
inline constexpr std::int64_t kCls = 2;
inline constexpr std::int64_t kSep = 3;
inline constexpr std::int64_t kMaskTok = 4;
inline constexpr std::int64_t kNumReserved = 5;

/// Lowercases ASCII and splits into runs of letters/digits. Bytes >= 0x80
/// are kept inside words so UTF-8 text survives intact.
std::vector<std::string> split_words(std::string_view raw);

class Vocabulary {
 public:
  Vocabulary();

  /// Words seen at least `min_freq` times, ordered lexicographically.
  static Vocabulary build(const std::vector<std::string>& corpus, std::size_t min_freq = 2);
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  std::int64_t id(const std::string& token) const;
  const std::string& token(std::int64_t id) const;
  std::size_t size() const { return tokens_.size(); }
  /// Non-reserved tokens in id order.
  std::vector<std::string> words() const;

  /// One token per line; line i holds id i + kNumReserved.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::int64_t, std::less<>> index_;
};

struct TextDocument {
  std::string raw;
  std::vector<std::int64_t> tokens;
};

TextDocument tokenize(std::string_view raw, const Vocabulary& vocab);

struct TransformerConfig {
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t model_dim = 128;
  std::size_t ff_dim = 256;
  std::size_t max_tokens = 256;

  void validate() const;
};

/// Model input after [CLS]/[SEP] insertion and truncation.
struct EncodedInput {
  std::vector<std::int64_t> ids;
  std::size_t dropped_a = 0;
  std::size_t dropped_b = 0;
};

/// [CLS] a [SEP] or [CLS] a [SEP] b [SEP]; b is cut before a.
EncodedInput build_input(const TextDocument& a, const TextDocument* b, std::size_t max_tokens);

class TextEncoder {
 public:
  TextEncoder(nn::ParameterStore& store, const std::string& name, TransformerConfig config, std::size_t vocab_size);

  /// Final-layer [CLS] state [model_dim].
  Tensor encode(const TextDocument& a, const TextDocument* b = nullptr) const;
  /// Rows of equal-length id sequences padded with kPad; returns [B, model_dim].
  /// If `attention` is given it receives one [B, heads, L, L] tensor per layer.
  Tensor encode_ids(const std::vector<std::vector<std::int64_t>>& batch,
                    std::vector<Tensor>* attention = nullptr) const;

  const TransformerConfig& config() const { return config_; }

 private:
  struct Block {
    nn::Linear q, k, v, o;
    nn::LayerNorm ln1;
    nn::Linear ff1, ff2;
    nn::LayerNorm ln2;
  };
  TransformerConfig config_;
  std::size_t vocab_size_;
  Tensor token_embedding_;
  Tensor position_embedding_;
  nn::LayerNorm embed_norm_;
  std::vector<Block> blocks_;
};

/// Linear projection of the [CLS] state followed by dropout.
Tensor uk_feature(const Tensor& cls_vec, const nn::Linear& fc, double dropout_rate);

}  // namespace kedd::text
