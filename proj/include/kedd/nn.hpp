// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Named trainable parameters and the small layers built from them.

#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "kedd/ops.hpp"
#include "kedd/tensor.hpp"

namespace kedd::nn {

using ad::Shape;
using ad::Tensor;

struct InitSpec {
  enum class Kind { kaiming_uniform, uniform, zeros, ones, constant };
  Kind kind = Kind::zeros;
  std::size_t fan_in = 1;  // kaiming_uniform
  double bound = 0.0;      // uniform: U(-bound, bound); constant: the value

  static InitSpec kaiming(std::size_t fan_in) { return {Kind::kaiming_uniform, fan_in, 0.0}; }
  static InitSpec uniform(double bound) { return {Kind::uniform, 1, bound}; }
  static InitSpec zeros() { return {Kind::zeros, 1, 0.0}; }
  static InitSpec ones() { return {Kind::ones, 1, 0.0}; }
  static InitSpec constant(double v) { return {Kind::constant, 1, v}; }
  std::string describe() const;
};

struct Parameter {
  std::string name;
  Tensor tensor;
  InitSpec init;
};

/// Owns every trainable tensor of a model, in creation order. Names are
/// unique; initialization draws from one seeded stream so a model built twice
/// with the same seed is bit-identical.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Tensor create(const std::string& name, Shape shape, InitSpec init);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Tensor> tensors() const;
  std::size_t total_size() const;
  void zero_grad();

 private:
  std::mt19937_64 rng_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

/// y = x W + b with W stored as [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, bool zero_weight = false);
  Tensor operator()(const Tensor& x) const;
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::size_t dim);
  Tensor operator()(const Tensor& x) const { return ad::layernorm(x, gamma, beta); }
};

}  // namespace kedd::nn
