// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "kedd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <unordered_map>

namespace kedd::ad {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

using detail::make_result;

std::size_t norm_axis(int axis, std::size_t rank, const Shape& shape) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  return static_cast<std::size_t>(a);
}

void require_rank_at_least(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() < r) {
    throw ShapeError(std::string(op) + ": expected rank >= " + std::to_string(r) + ", got " + shape_str(t.shape()));
  }
}

// Maps every flat index of `out` onto the flat index of a broadcast operand.
std::vector<std::size_t> broadcast_map(const Shape& out, const Shape& in) {
  const std::size_t r = out.size();
  const std::size_t off = r - in.size();
  std::vector<std::size_t> in_stride(r, 0);
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    in_stride[i + off] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  const std::size_t n = numel(out);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t cur = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    map[flat] = cur;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      cur += in_stride[d];
      if (idx[d] < out[d]) break;
      cur -= in_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

// Shared driver for broadcasting binary elementwise ops.
template <typename Fwd, typename GradA, typename GradB>
Tensor binary_broadcast(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, GradA ga, GradB gb) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), op);
  const std::size_t n = numel(out_shape);
  auto ma = std::make_shared<std::vector<std::size_t>>();
  auto mb = std::make_shared<std::vector<std::size_t>>();
  const bool same_a = a.shape() == out_shape;
  const bool same_b = b.shape() == out_shape;
  if (!same_a) *ma = broadcast_map(out_shape, a.shape());
  if (!same_b) *mb = broadcast_map(out_shape, b.shape());
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = fwd(av[same_a ? i : (*ma)[i]], bv[same_b ? i : (*mb)[i]]);
  }
  TensorImpl* pa = a.impl_ptr().get();
  TensorImpl* pb = b.impl_ptr().get();
  return make_result(op, std::move(out_shape), std::move(out), {a, b},
                     [pa, pb, ma, mb, same_a, same_b, n, ga, gb](const TensorImpl& o) {
                       const auto& g = o.grad;
                       if (pa->requires_grad) {
                         auto& da = pa->grad_buffer();
                         for (std::size_t i = 0; i < n; ++i) {
                           const std::size_t ia = same_a ? i : (*ma)[i];
                           const std::size_t ib = same_b ? i : (*mb)[i];
                           da[ia] += ga(g[i], pa->values[ia], pb->values[ib]);
                         }
                       }
                       if (pb->requires_grad) {
                         auto& db = pb->grad_buffer();
                         for (std::size_t i = 0; i < n; ++i) {
                           const std::size_t ia = same_a ? i : (*ma)[i];
                           const std::size_t ib = same_b ? i : (*mb)[i];
                           db[ib] += gb(g[i], pa->values[ia], pb->values[ib]);
                         }
                       }
                     });
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  TensorImpl* px = x.impl_ptr().get();
  return make_result(op, x.shape(), std::move(out), {x}, [px, deriv](const TensorImpl& o) {
    auto& dx = px->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += o.grad[i] * deriv(px->values[i], o.values[i]);
  });
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA[m,k] += dC[m,n] * B[k,n]^T
void gemm_nt(const double* dc, const double* b, double* da, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = dc + i * n;
    double* arow = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      arow[p] += acc;
    }
  }
}

// dB[k,n] += A[m,k]^T * dC[m,n]
void gemm_tn(const double* a, const double* dc, double* db, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* brow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------

CsrMatrix CsrMatrix::from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> triplets) {
  for (const auto& t : triplets) {
    if (t.row >= rows || t.col >= cols) {
      throw std::invalid_argument("sparse entry (" + std::to_string(t.row) + ", " + std::to_string(t.col) +
                                  ") outside " + std::to_string(rows) + "x" + std::to_string(cols));
    }
  }
  std::sort(triplets.begin(), triplets.end(),
            [](const Triplet& x, const Triplet& y) { return x.row != y.row ? x.row < y.row : x.col < y.col; });
  CsrMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.row_ptr.assign(rows + 1, 0);
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const auto& t = triplets[i];
    if (!m.col_idx.empty() && i > 0 && triplets[i - 1].row == t.row && triplets[i - 1].col == t.col) {
      m.vals.back() += t.value;
      continue;
    }
    m.col_idx.push_back(t.col);
    m.vals.push_back(t.value);
    ++m.row_ptr[t.row + 1];
  }
  for (std::size_t r = 0; r < rows; ++r) m.row_ptr[r + 1] += m.row_ptr[r];
  return m;
}

CsrMatrix CsrMatrix::transposed() const {
  std::vector<Triplet> t;
  t.reserve(vals.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t p = row_ptr[r]; p < row_ptr[r + 1]; ++p) t.push_back({col_idx[p], r, vals[p]});
  }
  return from_triplets(cols, rows, std::move(t));
}

Attrs& Attrs::set(const std::string& key, AttrValue value) {
  values_[key] = std::move(value);
  return *this;
}

const AttrValue& Attrs::find(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("missing attribute '" + key + "'");
  return it->second;
}

std::int64_t Attrs::get_int(const std::string& key, std::int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

std::int64_t Attrs::get_int(const std::string& key) const {
  const auto& v = find(key);
  if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
  throw std::invalid_argument("attribute '" + key + "' is not an integer");
}

double Attrs::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const auto& v = find(key);
  if (const auto* d = std::get_if<double>(&v)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  throw std::invalid_argument("attribute '" + key + "' is not a number");
}

const std::vector<std::int64_t>& Attrs::get_ints(const std::string& key) const {
  const auto& v = find(key);
  if (const auto* p = std::get_if<std::vector<std::int64_t>>(&v)) return *p;
  throw std::invalid_argument("attribute '" + key + "' is not an integer list");
}

const std::vector<double>& Attrs::get_doubles(const std::string& key) const {
  const auto& v = find(key);
  if (const auto* p = std::get_if<std::vector<double>>(&v)) return *p;
  throw std::invalid_argument("attribute '" + key + "' is not a number list");
}

const std::vector<std::uint8_t>& Attrs::get_mask(const std::string& key) const {
  const auto& v = find(key);
  if (const auto* p = std::get_if<std::vector<std::uint8_t>>(&v)) return *p;
  throw std::invalid_argument("attribute '" + key + "' is not a mask");
}

const CsrMatrix& Attrs::get_csr(const std::string& key) const {
  const auto& v = find(key);
  if (const auto* p = std::get_if<std::shared_ptr<const CsrMatrix>>(&v); p && *p) return **p;
  throw std::invalid_argument("attribute '" + key + "' is not a sparse matrix");
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank_at_least(a, 2, "matmul");
  require_rank_at_least(b, 2, "matmul");
  const std::size_t m = a.dim(-2);
  const std::size_t k = a.dim(-1);
  const std::size_t n = b.dim(-1);
  if (b.dim(-2) != k) {
    throw ShapeError("matmul: inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const bool shared_b = b.rank() == 2;
  if (!shared_b) {
    if (b.rank() != a.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
      throw ShapeError("matmul: batch dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
  }
  const std::size_t batch = a.numel() / (m * k);
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  std::vector<double> out(batch * m * n, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  if (shared_b) {
    gemm_nn(av, bv, out.data(), batch * m, k, n);
  } else {
    for (std::size_t s = 0; s < batch; ++s) gemm_nn(av + s * m * k, bv + s * k * n, out.data() + s * m * n, m, k, n);
  }
  TensorImpl* pa = a.impl_ptr().get();
  TensorImpl* pb = b.impl_ptr().get();
  return make_result("matmul", std::move(out_shape), std::move(out), {a, b},
                     [pa, pb, batch, m, k, n, shared_b](const TensorImpl& o) {
                       const double* g = o.grad.data();
                       if (pa->requires_grad) {
                         double* da = pa->grad_buffer().data();
                         if (shared_b) {
                           gemm_nt(g, pb->values.data(), da, batch * m, k, n);
                         } else {
                           for (std::size_t s = 0; s < batch; ++s)
                             gemm_nt(g + s * m * n, pb->values.data() + s * k * n, da + s * m * k, m, k, n);
                         }
                       }
                       if (pb->requires_grad) {
                         double* db = pb->grad_buffer().data();
                         if (shared_b) {
                           gemm_tn(pa->values.data(), g, db, batch * m, k, n);
                         } else {
                           for (std::size_t s = 0; s < batch; ++s)
                             gemm_tn(pa->values.data() + s * m * k, g + s * m * n, db + s * k * n, m, k, n);
                         }
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_broadcast(
      "add", a, b, [](double x, double y) { return x + y; }, [](double g, double, double) { return g; },
      [](double g, double, double) { return g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_broadcast(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  const std::size_t ax = norm_axis(axis, first.size(), first);
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) throw ShapeError("concat: rank mismatch " + shape_str(first) + " vs " + shape_str(p.shape()));
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != ax && p.shape()[d] != first[d]) {
        throw ShapeError("concat: shape mismatch " + shape_str(first) + " vs " + shape_str(p.shape()));
      }
    }
    out_shape[ax] += p.shape()[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= first[d];
  for (std::size_t d = ax + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_row = out_shape[ax] * inner;
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t w = p.shape()[ax] * inner;
    const auto pv = p.values();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(pv.data() + o * w, w, out.data() + o * out_row + off);
    off += w;
  }
  std::vector<TensorImpl*> ptrs;
  for (const auto& p : parts) ptrs.push_back(p.impl_ptr().get());
  return make_result("concat", std::move(out_shape), std::move(out), parts,
                     [ptrs, offsets, outer, inner, out_row, ax](const TensorImpl& o) {
                       for (std::size_t i = 0; i < ptrs.size(); ++i) {
                         if (!ptrs[i]->requires_grad) continue;
                         auto& d = ptrs[i]->grad_buffer();
                         const std::size_t w = ptrs[i]->shape[ax] * inner;
                         for (std::size_t r = 0; r < outer; ++r) {
                           const double* src = o.grad.data() + r * out_row + offsets[i];
                           double* dst = d.data() + r * w;
                           for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
                         }
                       }
                     });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) { return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v); });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor softmax_lastdim(const Tensor& x) {
  require_rank_at_least(x, 1, "softmax_lastdim");
  const std::size_t n = x.dim(-1);
  if (n == 0) throw ShapeError("softmax_lastdim: empty last dim");
  const std::size_t rows = x.numel() / n;
  const auto xv = x.values();
  std::vector<double> out(xv.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    if (mx == kNegInf) continue;  // fully masked row stays zero
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = row[j] == kNegInf ? 0.0 : std::exp(row[j] - mx);
      total += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= total;
  }
  TensorImpl* px = x.impl_ptr().get();
  return make_result("softmax_lastdim", x.shape(), std::move(out), {x}, [px, rows, n](const TensorImpl& o) {
    auto& dx = px->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = o.values.data() + r * n;
      const double* g = o.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * g[j];
      for (std::size_t j = 0; j < n; ++j) dx[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank_at_least(x, 1, "layernorm");
  const std::size_t n = x.dim(-1);
  if (gamma.defined() && gamma.shape() != Shape{n}) {
    throw ShapeError("layernorm: gamma " + shape_str(gamma.shape()) + " vs input " + shape_str(x.shape()));
  }
  if (beta.defined() && beta.shape() != Shape{n}) {
    throw ShapeError("layernorm: beta " + shape_str(beta.shape()) + " vs input " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / n;
  const auto xv = x.values();
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mean) * is;
      (*xhat)[r * n + j] = h;
      out[r * n + j] = h * (gamma.defined() ? gamma.values()[j] : 1.0) + (beta.defined() ? beta.values()[j] : 0.0);
    }
  }
  TensorImpl* px = x.impl_ptr().get();
  TensorImpl* pg = gamma.defined() ? gamma.impl_ptr().get() : nullptr;
  TensorImpl* pb = beta.defined() ? beta.impl_ptr().get() : nullptr;
  return make_result("layernorm", x.shape(), std::move(out), {x, gamma, beta},
                     [px, pg, pb, xhat, inv_std, rows, n](const TensorImpl& o) {
                       const auto& g = o.grad;
                       if (pg && pg->requires_grad) {
                         auto& dg = pg->grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) dg[i % n] += g[i] * (*xhat)[i];
                       }
                       if (pb && pb->requires_grad) {
                         auto& db = pb->grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) db[i % n] += g[i];
                       }
                       if (!px->requires_grad) return;
                       auto& dx = px->grad_buffer();
                       std::vector<double> dh(n);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double mean_dh = 0.0, mean_dh_h = 0.0;
                         for (std::size_t j = 0; j < n; ++j) {
                           dh[j] = g[r * n + j] * (pg ? pg->values[j] : 1.0);
                           mean_dh += dh[j];
                           mean_dh_h += dh[j] * (*xhat)[r * n + j];
                         }
                         mean_dh /= static_cast<double>(n);
                         mean_dh_h /= static_cast<double>(n);
                         for (std::size_t j = 0; j < n; ++j) {
                           dx[r * n + j] += (*inv_std)[r] * (dh[j] - mean_dh - (*xhat)[r * n + j] * mean_dh_h);
                         }
                       }
                     });
}

Tensor dropout(const Tensor& x, double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  if (!is_training() || rate == 0.0) return x;
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  auto& rng = dropout_rng();
  for (auto& m : *mask) m = keep(rng) ? s : 0.0;
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * (*mask)[i];
  TensorImpl* px = x.impl_ptr().get();
  return make_result("dropout", x.shape(), std::move(out), {x}, [px, mask](const TensorImpl& o) {
    auto& dx = px->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += o.grad[i] * (*mask)[i];
  });
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding) {
  if (x.rank() != 2 && x.rank() != 3) throw ShapeError("conv1d: input must be [C, L] or [B, C, L], got " + shape_str(x.shape()));
  if (weight.rank() != 3) throw ShapeError("conv1d: kernel must be [C_out, C_in, K], got " + shape_str(weight.shape()));
  if (stride == 0) throw std::invalid_argument("conv1d: stride must be positive");
  const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t cin = x.dim(-2);
  const std::size_t len = x.dim(-1);
  const std::size_t cout = weight.dim(0);
  const std::size_t kw = weight.dim(2);
  if (weight.dim(1) != cin) {
    throw ShapeError("conv1d: channel mismatch input " + shape_str(x.shape()) + " kernel " + shape_str(weight.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{cout}) {
    throw ShapeError("conv1d: bias " + shape_str(bias.shape()) + " for " + std::to_string(cout) + " channels");
  }
  if (len + 2 * padding < kw) {
    throw ShapeError("conv1d: kernel width " + std::to_string(kw) + " exceeds padded length of " + shape_str(x.shape()));
  }
  const std::size_t lout = (len + 2 * padding - kw) / stride + 1;
  Shape out_shape = x.rank() == 3 ? Shape{batch, cout, lout} : Shape{cout, lout};
  std::vector<double> out(batch * cout * lout, 0.0);
  const double* xv = x.values().data();
  const double* wv = weight.values().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      double* orow = out.data() + (b * cout + co) * lout;
      if (bias.defined()) std::fill_n(orow, lout, bias.values()[co]);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* xrow = xv + (b * cin + ci) * len;
        const double* wrow = wv + (co * cin + ci) * kw;
        for (std::size_t t = 0; t < lout; ++t) {
          const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(t * stride) - static_cast<std::ptrdiff_t>(padding);
          double acc = 0.0;
          for (std::size_t q = 0; q < kw; ++q) {
            const std::ptrdiff_t pos = base + static_cast<std::ptrdiff_t>(q);
            if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(len)) acc += wrow[q] * xrow[pos];
          }
          orow[t] += acc;
        }
      }
    }
  }
  TensorImpl* px = x.impl_ptr().get();
  TensorImpl* pw = weight.impl_ptr().get();
  TensorImpl* pb = bias.defined() ? bias.impl_ptr().get() : nullptr;
  return make_result(
      "conv1d", std::move(out_shape), std::move(out), {x, weight, bias},
      [px, pw, pb, batch, cin, cout, len, kw, lout, stride, padding](const TensorImpl& o) {
        const double* g = o.grad.data();
        double* dx = px->requires_grad ? px->grad_buffer().data() : nullptr;
        double* dw = pw->requires_grad ? pw->grad_buffer().data() : nullptr;
        if (pb && pb->requires_grad) {
          auto& db = pb->grad_buffer();
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t co = 0; co < cout; ++co)
              for (std::size_t t = 0; t < lout; ++t) db[co] += g[(b * cout + co) * lout + t];
        }
        if (!dx && !dw) return;
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t co = 0; co < cout; ++co) {
            const double* grow = g + (b * cout + co) * lout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const double* xrow = px->values.data() + (b * cin + ci) * len;
              const double* wrow = pw->values.data() + (co * cin + ci) * kw;
              for (std::size_t t = 0; t < lout; ++t) {
                const double gv = grow[t];
                if (gv == 0.0) continue;
                const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(t * stride) - static_cast<std::ptrdiff_t>(padding);
                for (std::size_t q = 0; q < kw; ++q) {
                  const std::ptrdiff_t pos = base + static_cast<std::ptrdiff_t>(q);
                  if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(len)) continue;
                  if (dw) dw[(co * cin + ci) * kw + q] += gv * xrow[pos];
                  if (dx) dx[(b * cin + ci) * len + static_cast<std::size_t>(pos)] += gv * wrow[q];
                }
              }
            }
          }
        }
      });
}

Tensor maxpool1d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  if (x.rank() != 2 && x.rank() != 3) throw ShapeError("maxpool1d: input must be [C, L] or [B, C, L], got " + shape_str(x.shape()));
  const std::size_t len = x.dim(-1);
  if (len == 0) throw ShapeError("maxpool1d: empty length");
  if (kernel == 0) kernel = len;
  if (stride == 0) stride = kernel;
  if (kernel > len) throw ShapeError("maxpool1d: kernel " + std::to_string(kernel) + " exceeds length " + std::to_string(len));
  const std::size_t rows = x.numel() / len;
  const std::size_t lout = (len - kernel) / stride + 1;
  Shape out_shape = x.shape();
  out_shape.back() = lout;
  std::vector<double> out(rows * lout);
  auto argmax = std::make_shared<std::vector<std::size_t>>(rows * lout);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < lout; ++t) {
      std::size_t best = r * len + t * stride;
      for (std::size_t q = 1; q < kernel; ++q) {
        const std::size_t i = r * len + t * stride + q;
        if (xv[i] > xv[best]) best = i;
      }
      out[r * lout + t] = xv[best];
      (*argmax)[r * lout + t] = best;
    }
  }
  TensorImpl* px = x.impl_ptr().get();
  return make_result("maxpool1d", std::move(out_shape), std::move(out), {x}, [px, argmax](const TensorImpl& o) {
    auto& dx = px->grad_buffer();
    for (std::size_t i = 0; i < argmax->size(); ++i) dx[(*argmax)[i]] += o.grad[i];
  });
}

Tensor mean_lastdim(const Tensor& x) {
  require_rank_at_least(x, 1, "mean_lastdim");
  const std::size_t n = x.dim(-1);
  if (n == 0) throw ShapeError("mean_lastdim: empty last dim");
  const std::size_t rows = x.numel() / n;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  std::vector<double> out(rows, 0.0);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += xv[r * n + j];
    out[r] = s / static_cast<double>(n);
  }
  TensorImpl* px = x.impl_ptr().get();
  return make_result("mean_lastdim", std::move(out_shape), std::move(out), {x}, [px, rows, n](const TensorImpl& o) {
    auto& dx = px->grad_buffer();
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) dx[r * n + j] += o.grad[r] * inv;
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::int64_t> ids) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be [V, d], got " + shape_str(table.shape()));
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  auto idx = std::make_shared<std::vector<std::size_t>>();
  idx->reserve(ids.size());
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw ShapeError("embedding_lookup: id " + std::to_string(id) + " outside table " + shape_str(table.shape()));
    }
    idx->push_back(static_cast<std::size_t>(id));
  }
  std::vector<double> out(idx->size() * d);
  const auto tv = table.values();
  for (std::size_t i = 0; i < idx->size(); ++i) std::copy_n(tv.data() + (*idx)[i] * d, d, out.data() + i * d);
  TensorImpl* pt = table.impl_ptr().get();
  return make_result("embedding_lookup", Shape{idx->size(), d}, std::move(out), {table}, [pt, idx, d](const TensorImpl& o) {
    auto& dt = pt->grad_buffer();
    for (std::size_t i = 0; i < idx->size(); ++i)
      for (std::size_t j = 0; j < d; ++j) dt[(*idx)[i] * d + j] += o.grad[i * d + j];
  });
}

Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask, double value) {
  if (mask.size() != x.numel()) {
    throw ShapeError("masked_fill: mask of " + std::to_string(mask.size()) + " entries for " + shape_str(x.shape()));
  }
  auto m = std::make_shared<std::vector<std::uint8_t>>(mask.begin(), mask.end());
  const auto xv = x.values();
  std::vector<double> out(xv.begin(), xv.end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = value;
  TensorImpl* px = x.impl_ptr().get();
  return make_result("masked_fill", x.shape(), std::move(out), {x}, [px, m](const TensorImpl& o) {
    auto& dx = px->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!(*m)[i]) dx[i] += o.grad[i];
  });
}

std::vector<std::size_t> topk_indices(std::span<const double> row, std::size_t k) {
  if (row.empty()) throw ShapeError("topk: empty row");
  if (k == 0) throw std::invalid_argument("topk: k must be >= 1");
  k = std::min(k, row.size());
  std::vector<std::size_t> idx(row.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto better = [&](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); };
  if (k < row.size()) std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k - 1), idx.end(), better);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Tensor topk_mask(const Tensor& x, std::size_t k) {
  require_rank_at_least(x, 1, "topk_mask");
  const std::size_t n = x.dim(-1);
  if (n == 0) throw ShapeError("topk_mask: empty last dim in " + shape_str(x.shape()));
  if (k == 0) throw std::invalid_argument("topk_mask: k must be >= 1");
  const std::size_t rows = x.numel() / n;
  const auto xv = x.values();
  auto keep = std::make_shared<std::vector<std::uint8_t>>(x.numel(), 0);
  std::vector<double> out(x.numel(), kNegInf);
  for (std::size_t r = 0; r < rows; ++r) {
    for (auto j : topk_indices(xv.subspan(r * n, n), k)) {
      (*keep)[r * n + j] = 1;
      out[r * n + j] = xv[r * n + j];
    }
  }
  TensorImpl* px = x.impl_ptr().get();
  return make_result("topk_mask", x.shape(), std::move(out), {x}, [px, keep](const TensorImpl& o) {
    auto& dx = px->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i)
      if ((*keep)[i]) dx[i] += o.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  const auto xv = x.values();
  const double s = std::accumulate(xv.begin(), xv.end(), 0.0);
  TensorImpl* px = x.impl_ptr().get();
  return make_result("sum", Shape{}, {s}, {x}, [px](const TensorImpl& o) {
    auto& dx = px->grad_buffer();
    for (auto& v : dx) v += o.grad[0];
  });
}

Tensor transpose(const Tensor& x, int dim0, int dim1) {
  require_rank_at_least(x, 2, "transpose");
  const std::size_t r = x.rank();
  const std::size_t a = norm_axis(dim0, r, x.shape());
  const std::size_t b = norm_axis(dim1, r, x.shape());
  if (a == b) return x;
  Shape out_shape = x.shape();
  std::swap(out_shape[a], out_shape[b]);
  // Strides of the input, permuted into output order.
  std::vector<std::size_t> in_stride(r);
  std::size_t s = 1;
  for (std::size_t d = r; d-- > 0;) {
    in_stride[d] = s;
    s *= x.shape()[d];
  }
  std::swap(in_stride[a], in_stride[b]);
  const std::size_t n = x.numel();
  auto src = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t cur = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    (*src)[flat] = cur;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      cur += in_stride[d];
      if (idx[d] < out_shape[d]) break;
      cur -= in_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  const auto xv = x.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[(*src)[i]];
  TensorImpl* px = x.impl_ptr().get();
  return make_result("transpose", std::move(out_shape), std::move(out), {x}, [px, src](const TensorImpl& o) {
    auto& dx = px->grad_buffer();
    for (std::size_t i = 0; i < src->size(); ++i) dx[(*src)[i]] += o.grad[i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
  }
  const auto xv = x.values();
  TensorImpl* px = x.impl_ptr().get();
  return make_result("reshape", std::move(shape), std::vector<double>(xv.begin(), xv.end()), {x},
                     [px](const TensorImpl& o) {
                       auto& dx = px->grad_buffer();
                       for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += o.grad[i];
                     });
}

Tensor spmm(std::shared_ptr<const CsrMatrix> matrix, const Tensor& x) {
  if (!matrix) throw std::invalid_argument("spmm: null matrix");
  if (x.rank() != 2 || x.dim(0) != matrix->cols) {
    throw ShapeError("spmm: sparse " + std::to_string(matrix->rows) + "x" + std::to_string(matrix->cols) +
                     " times " + shape_str(x.shape()));
  }
  const std::size_t d = x.dim(1);
  std::vector<double> out(matrix->rows * d, 0.0);
  const auto xv = x.values();
  for (std::size_t r = 0; r < matrix->rows; ++r) {
    for (std::size_t p = matrix->row_ptr[r]; p < matrix->row_ptr[r + 1]; ++p) {
      const double v = matrix->vals[p];
      const double* src = xv.data() + matrix->col_idx[p] * d;
      double* dst = out.data() + r * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += v * src[j];
    }
  }
  TensorImpl* px = x.impl_ptr().get();
  return make_result("spmm", Shape{matrix->rows, d}, std::move(out), {x}, [px, matrix, d](const TensorImpl& o) {
    auto& dx = px->grad_buffer();
    for (std::size_t r = 0; r < matrix->rows; ++r) {
      for (std::size_t p = matrix->row_ptr[r]; p < matrix->row_ptr[r + 1]; ++p) {
        const double v = matrix->vals[p];
        const double* g = o.grad.data() + r * d;
        double* dst = dx.data() + matrix->col_idx[p] * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += v * g[j];
      }
    }
  });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> labels) {
  if (labels.size() != logits.numel() || labels.empty()) {
    throw ShapeError("bce_with_logits: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_str(logits.shape()));
  }
  const auto z = logits.values();
  const double n = static_cast<double>(labels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    total += std::max(z[i], 0.0) - z[i] * labels[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  auto y = std::make_shared<std::vector<double>>(labels.begin(), labels.end());
  TensorImpl* pz = logits.impl_ptr().get();
  return make_result("bce_with_logits", Shape{}, {total / n}, {logits}, [pz, y, n](const TensorImpl& o) {
    auto& dz = pz->grad_buffer();
    for (std::size_t i = 0; i < dz.size(); ++i) {
      const double v = pz->values[i];
      const double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      dz[i] += o.grad[0] * (s - (*y)[i]) / n;
    }
  });
}

// ---------------------------------------------------------------------------

namespace {

using OpFn = std::function<Tensor(const std::vector<Tensor>&, const Attrs&)>;

void expect_inputs(std::string_view op, const std::vector<Tensor>& in, std::size_t lo, std::size_t hi) {
  if (in.size() < lo || in.size() > hi) {
    throw std::invalid_argument(std::string(op) + ": expected " + std::to_string(lo) +
                                (lo == hi ? "" : ".." + std::to_string(hi)) + " inputs, got " +
                                std::to_string(in.size()));
  }
  for (const auto& t : in) {
    if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined input tensor");
  }
}

std::size_t as_size(std::int64_t v, const char* what) {
  if (v < 0) throw std::invalid_argument(std::string(what) + " must be non-negative");
  return static_cast<std::size_t>(v);
}

const std::unordered_map<std::string_view, OpFn>& op_table() {
  static const std::unordered_map<std::string_view, OpFn> table = {
      {"matmul", [](const auto& in, const Attrs&) { expect_inputs("matmul", in, 2, 2); return matmul(in[0], in[1]); }},
      {"add", [](const auto& in, const Attrs&) { expect_inputs("add", in, 2, 2); return add(in[0], in[1]); }},
      {"mul", [](const auto& in, const Attrs&) { expect_inputs("mul", in, 2, 2); return mul(in[0], in[1]); }},
      {"concat",
       [](const auto& in, const Attrs& a) {
         expect_inputs("concat", in, 1, SIZE_MAX);
         return concat(in, static_cast<int>(a.get_int("axis", -1)));
       }},
      {"relu", [](const auto& in, const Attrs&) { expect_inputs("relu", in, 1, 1); return relu(in[0]); }},
      {"gelu", [](const auto& in, const Attrs&) { expect_inputs("gelu", in, 1, 1); return gelu(in[0]); }},
      {"sigmoid", [](const auto& in, const Attrs&) { expect_inputs("sigmoid", in, 1, 1); return sigmoid(in[0]); }},
      {"log", [](const auto& in, const Attrs&) { expect_inputs("log", in, 1, 1); return log(in[0]); }},
      {"scale",
       [](const auto& in, const Attrs& a) {
         expect_inputs("scale", in, 1, 1);
         return scale(in[0], a.get_double("factor", 1.0));
       }},
      {"softmax_lastdim",
       [](const auto& in, const Attrs&) { expect_inputs("softmax_lastdim", in, 1, 1); return softmax_lastdim(in[0]); }},
      {"layernorm",
       [](const auto& in, const Attrs& a) {
         if (in.size() != 1 && in.size() != 3) throw std::invalid_argument("layernorm: expected 1 or 3 inputs");
         expect_inputs("layernorm", in, 1, 3);
         const double eps = a.get_double("eps", 1e-5);
         return in.size() == 3 ? layernorm(in[0], in[1], in[2], eps) : layernorm(in[0], {}, {}, eps);
       }},
      {"dropout",
       [](const auto& in, const Attrs& a) {
         expect_inputs("dropout", in, 1, 1);
         return dropout(in[0], a.get_double("rate", 0.0));
       }},
      {"conv1d",
       [](const auto& in, const Attrs& a) {
         expect_inputs("conv1d", in, 2, 3);
         return conv1d(in[0], in[1], in.size() == 3 ? in[2] : Tensor{}, as_size(a.get_int("stride", 1), "stride"),
                       as_size(a.get_int("padding", 0), "padding"));
       }},
      {"maxpool1d",
       [](const auto& in, const Attrs& a) {
         expect_inputs("maxpool1d", in, 1, 1);
         return maxpool1d(in[0], as_size(a.get_int("kernel", 0), "kernel"), as_size(a.get_int("stride", 0), "stride"));
       }},
      {"mean_lastdim",
       [](const auto& in, const Attrs&) { expect_inputs("mean_lastdim", in, 1, 1); return mean_lastdim(in[0]); }},
      {"embedding_lookup",
       [](const auto& in, const Attrs& a) {
         expect_inputs("embedding_lookup", in, 1, 1);
         return embedding_lookup(in[0], a.get_ints("ids"));
       }},
      {"masked_fill",
       [](const auto& in, const Attrs& a) {
         expect_inputs("masked_fill", in, 1, 1);
         return masked_fill(in[0], a.get_mask("mask"), a.get_double("value", 0.0));
       }},
      {"topk_mask",
       [](const auto& in, const Attrs& a) {
         expect_inputs("topk_mask", in, 1, 1);
         return topk_mask(in[0], as_size(a.get_int("k"), "k"));
       }},
      {"sum", [](const auto& in, const Attrs&) { expect_inputs("sum", in, 1, 1); return sum(in[0]); }},
      {"transpose",
       [](const auto& in, const Attrs& a) {
         expect_inputs("transpose", in, 1, 1);
         return transpose(in[0], static_cast<int>(a.get_int("dim0", -2)), static_cast<int>(a.get_int("dim1", -1)));
       }},
      {"reshape",
       [](const auto& in, const Attrs& a) {
         expect_inputs("reshape", in, 1, 1);
         Shape s;
         for (auto v : a.get_ints("shape")) s.push_back(as_size(v, "shape extent"));
         return reshape(in[0], std::move(s));
       }},
      {"spmm",
       [](const auto& in, const Attrs& a) {
         expect_inputs("spmm", in, 1, 1);
         return spmm(std::make_shared<const CsrMatrix>(a.get_csr("matrix")), in[0]);
       }},
      {"bce_with_logits",
       [](const auto& in, const Attrs& a) {
         expect_inputs("bce_with_logits", in, 1, 1);
         return bce_with_logits(in[0], a.get_doubles("labels"));
       }},
  };
  return table;
}

}  // namespace

Tensor apply(std::string_view op_name, const std::vector<Tensor>& inputs, const Attrs& attrs) {
  const auto& table = op_table();
  auto it = table.find(op_name);
  if (it == table.end()) throw std::invalid_argument("unknown op '" + std::string(op_name) + "'");
  return it->second(inputs, attrs);
}

const std::vector<std::string>& registered_ops() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [k, _] : op_table()) v.emplace_back(k);
    std::sort(v.begin(), v.end());
    return v;
  }();
  return names;
}

}  // namespace kedd::ad
