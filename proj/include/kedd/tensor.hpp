// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode automatic differentiation over 64-bit tensors.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kedd::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when operand shapes do not conform to an op's shape rule.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TensorImpl;

/// Backward closure of one recorded operation. `fn` reads the output's grad
/// buffer and accumulates into the grad buffers of `inputs`.
struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> fn;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until first accumulation
  std::shared_ptr<Node> node;

  /// Grad buffer sized to `values`, allocated on first use.
  std::vector<double>& grad_buffer();
};

/// Shared handle to a tensor. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(int axis) const;
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->values.size(); }

  std::span<const double> values() const { return impl_->values; }
  /// In-place access for parameter updates and finite-difference probes.
  std::span<double> mutable_values() { return impl_->values; }
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient values; all zeros if none has been accumulated yet.
  std::vector<double> grad() const;
  std::span<const double> grad_view() const { return impl_->grad; }
  void zero_grad();

  /// Copy of the values with no graph history.
  Tensor detach() const;

  TensorImpl& impl() const { return *impl_; }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Populates d(loss)/d(leaf) into every reachable leaf that requires grad.
/// Leaf gradients accumulate across calls until zeroed.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Per-thread engine state: train/eval mode, gradient recording, dropout RNG.

bool is_training();
void set_training(bool training);
bool is_grad_enabled();
void seed_dropout(std::uint64_t seed);
std::mt19937_64& dropout_rng();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Sets train/eval mode for the lifetime of the guard.
class ModeGuard {
 public:
  explicit ModeGuard(bool training);
  ~ModeGuard();
  ModeGuard(const ModeGuard&) = delete;
  ModeGuard& operator=(const ModeGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {
/// Builds an output tensor and records `fn` iff any input requires grad.
Tensor make_result(std::string op, Shape shape, std::vector<double> values,
                   std::initializer_list<Tensor> inputs,
                   std::function<void(const TensorImpl& out)> fn);
Tensor make_result(std::string op, Shape shape, std::vector<double> values,
                   const std::vector<Tensor>& inputs,
                   std::function<void(const TensorImpl& out)> fn);
}  // namespace detail

}  // namespace kedd::ad
