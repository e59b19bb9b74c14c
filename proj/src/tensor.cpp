// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "kedd/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace kedd::ad {

namespace {

struct EngineState {
  bool training = false;
  int no_grad_depth = 0;
  std::mt19937_64 rng{0x6b656464ULL};
};

EngineState& state() {
  thread_local EngineState s;
  return s;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& TensorImpl::grad_buffer() {
  if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  return grad;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (ad::numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = ad::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

std::size_t Tensor::dim(int axis) const {
  const int r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return shape()[static_cast<std::size_t>(a)];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->values[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("index rank mismatch for " + shape_str(shape()));
  std::size_t flat = 0;
  std::size_t i = 0;
  for (auto v : index) {
    if (v >= shape()[i]) throw std::out_of_range("index out of range for " + shape_str(shape()));
    flat = flat * shape()[i] + v;
    ++i;
  }
  return impl_->values[flat];
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const { return from(shape(), impl_->values, false); }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1 || loss.rank() > 1) {
    throw ShapeError("backward requires a scalar loss, got " + (loss.defined() ? shape_str(loss.shape()) : "undefined"));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; `order` ends with the loss.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(&loss.impl(), 0);
  visited.insert(&loss.impl());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    if (t->node && next < t->node->inputs.size()) {
      TensorImpl* child = t->node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(t);
    stack.pop_back();
  }

  // Intermediate grads are scratch space for this pass only.
  for (auto* t : order) {
    if (t->node) t->grad.assign(t->values.size(), 0.0);
  }
  loss.impl().grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = *it;
    if (t->node) t->node->fn(*t);
  }
  for (auto* t : order) {
    if (t->node) {
      t->grad.clear();
      t->grad.shrink_to_fit();
    }
  }
}

bool is_training() { return state().training; }
void set_training(bool training) { state().training = training; }
bool is_grad_enabled() { return state().no_grad_depth == 0; }
void seed_dropout(std::uint64_t seed) { state().rng.seed(seed); }
std::mt19937_64& dropout_rng() { return state().rng; }

NoGradGuard::NoGradGuard() { ++state().no_grad_depth; }
NoGradGuard::~NoGradGuard() { --state().no_grad_depth; }

ModeGuard::ModeGuard(bool training) : previous_(state().training) { state().training = training; }
ModeGuard::~ModeGuard() { state().training = previous_; }

namespace detail {

namespace {
template <typename Range>
Tensor make_result_impl(std::string op, Shape shape, std::vector<double> values, const Range& inputs,
                        std::function<void(const TensorImpl& out)> fn) {
  Tensor out = Tensor::from(std::move(shape), std::move(values), false);
  if (!is_grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
  if (!any) return out;
  auto node = std::make_shared<Node>();
  node->op = std::move(op);
  for (const auto& in : inputs) {
    if (in.defined()) node->inputs.push_back(in.impl_ptr());
  }
  node->fn = std::move(fn);
  out.impl().requires_grad = true;
  out.impl().node = std::move(node);
  return out;
}
}  // namespace

Tensor make_result(std::string op, Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   std::function<void(const TensorImpl& out)> fn) {
  return make_result_impl(std::move(op), std::move(shape), std::move(values), inputs, std::move(fn));
}

Tensor make_result(std::string op, Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   std::function<void(const TensorImpl& out)> fn) {
  return make_result_impl(std::move(op), std::move(shape), std::move(values), inputs, std::move(fn));
}

}  // namespace detail

}  // namespace kedd::ad
