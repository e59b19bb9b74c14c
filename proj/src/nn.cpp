// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "kedd/nn.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace kedd::nn {

std::string InitSpec::describe() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::kaiming_uniform: os << "kaiming_uniform(fan_in=" << fan_in << ")"; break;
    case Kind::uniform: os << "uniform(" << bound << ")"; break;
    case Kind::zeros: os << "zeros"; break;
    case Kind::ones: os << "ones"; break;
    case Kind::constant: os << "constant(" << bound << ")"; break;
  }
  return os.str();
}

Tensor ParameterStore::create(const std::string& name, Shape shape, InitSpec init) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  const std::size_t n = ad::numel(shape);
  std::vector<double> values(n, 0.0);
  switch (init.kind) {
    case InitSpec::Kind::kaiming_uniform: {
      const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(init.fan_in, 1)));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto& v : values) v = u(rng_);
      break;
    }
    case InitSpec::Kind::uniform: {
      std::uniform_real_distribution<double> u(-init.bound, init.bound);
      for (auto& v : values) v = u(rng_);
      break;
    }
    case InitSpec::Kind::zeros: break;
    case InitSpec::Kind::ones: values.assign(n, 1.0); break;
    case InitSpec::Kind::constant: values.assign(n, init.bound); break;
  }
  Tensor t = Tensor::from(std::move(shape), std::move(values), true);
  index_[name] = params_.size();
  params_.push_back({name, t, init});
  return t;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return params_[it->second].tensor;
}

std::vector<Tensor> ParameterStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

std::size_t ParameterStore::total_size() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, bool zero_weight)
    : weight(store.create(name + ".weight", {in, out}, zero_weight ? InitSpec::zeros() : InitSpec::kaiming(in))),
      bias(store.create(name + ".bias", {out}, InitSpec::zeros())) {}

Tensor Linear::operator()(const Tensor& x) const {
  if (x.rank() == 1) return ad::reshape((*this)(ad::reshape(x, {1, x.dim(0)})), {out_features()});
  return ad::add(ad::matmul(x, weight), bias);
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, std::size_t dim)
    : gamma(store.create(name + ".gamma", {dim}, InitSpec::ones())),
      beta(store.create(name + ".beta", {dim}, InitSpec::zeros())) {}

}  // namespace kedd::nn
