// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations. Every op has a typed entry point and is
// also reachable by name through `apply`.
//
// Shape rules (`...` are leading batch dims):
//   matmul        [..., m, k] x [k, n] -> [..., m, n]; or equal batch dims on both sides
//   add, mul      numpy-style broadcasting (right-aligned, size-1 dims stretch)
//   concat        equal shapes except along `axis` (default last)
//   relu/gelu/sigmoid/log/scale   elementwise
//   softmax_lastdim, layernorm    along the last dim
//   dropout       elementwise; identity in evaluation mode
//   conv1d        x [C_in, L] or [B, C_in, L], w [C_out, C_in, K], b [C_out]
//   maxpool1d     [C, L] or [B, C, L] -> [.., C, L_out]; default kernel = L (global)
//   mean_lastdim  [..., n] -> [...]
//   embedding_lookup  table [V, d], ids -> [n, d]
//   masked_fill   mask has x.numel() entries
//   topk_mask     keeps the k largest per last-dim row, others -> -inf
//   sum           any -> []
//   transpose     swaps dims (default the last two)
//   reshape       same numel
//   spmm          constant sparse [r, c] times x [c, d] -> [r, d]
//   bce_with_logits  logits of n entries, labels n -> [] (mean)

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "kedd/tensor.hpp"

namespace kedd::ad {

/// Constant row-compressed sparse matrix used by `spmm`.
struct CsrMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr;  // rows + 1
  std::vector<std::size_t> col_idx;
  std::vector<double> vals;

  struct Triplet {
    std::size_t row, col;
    double value;
  };
  /// Duplicate coordinates are summed.
  static CsrMatrix from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> triplets);
  CsrMatrix transposed() const;
};

using AttrValue = std::variant<std::int64_t, double, std::vector<std::int64_t>, std::vector<double>,
                               std::vector<std::uint8_t>, std::shared_ptr<const CsrMatrix>>;

class Attrs {
 public:
  Attrs() = default;
  Attrs(std::initializer_list<std::pair<const std::string, AttrValue>> init) : values_(init) {}

  Attrs& set(const std::string& key, AttrValue value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  const std::vector<std::int64_t>& get_ints(const std::string& key) const;
  const std::vector<double>& get_doubles(const std::string& key) const;
  const std::vector<std::uint8_t>& get_mask(const std::string& key) const;
  const CsrMatrix& get_csr(const std::string& key) const;

 private:
  const AttrValue& find(const std::string& key) const;
  std::map<std::string, AttrValue> values_;
};

/// Dispatches by op name. Unknown names and malformed attrs throw
/// std::invalid_argument; shape violations throw ShapeError.
Tensor apply(std::string_view op_name, const std::vector<Tensor>& inputs, const Attrs& attrs = {});

/// Names accepted by `apply`.
const std::vector<std::string>& registered_ops();

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor concat(const std::vector<Tensor>& parts, int axis = -1);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor softmax_lastdim(const Tensor& x);
/// Normalizes over the last dim; gamma/beta may be undefined.
Tensor layernorm(const Tensor& x, const Tensor& gamma = {}, const Tensor& beta = {}, double eps = 1e-5);
/// Inverted dropout; draws from the per-thread dropout RNG in training mode.
Tensor dropout(const Tensor& x, double rate);
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias = {}, std::size_t stride = 1,
              std::size_t padding = 0);
/// kernel == 0 means global pooling over the whole length.
Tensor maxpool1d(const Tensor& x, std::size_t kernel = 0, std::size_t stride = 0);
Tensor mean_lastdim(const Tensor& x);
Tensor embedding_lookup(const Tensor& table, std::span<const std::int64_t> ids);
Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask, double value);
Tensor topk_mask(const Tensor& x, std::size_t k);
Tensor sum(const Tensor& x);
Tensor transpose(const Tensor& x, int dim0 = -2, int dim1 = -1);
Tensor reshape(const Tensor& x, Shape shape);
Tensor spmm(std::shared_ptr<const CsrMatrix> matrix, const Tensor& x);
Tensor bce_with_logits(const Tensor& logits, std::span<const double> labels);

/// Indices kept by topk_mask for one row: the k largest, ties to the lowest
/// index, returned in ascending index order.
std::vector<std::size_t> topk_indices(std::span<const double> row, std::size_t k);

}  // namespace kedd::ad
