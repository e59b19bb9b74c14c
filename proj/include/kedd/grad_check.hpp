// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kedd/tensor.hpp"

namespace kedd::ad {

struct GradCheckReport {
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<double> relative_error;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  /// Set when a non-finite value shows up at some coordinate.
  std::optional<std::size_t> non_finite_index;
  bool passed = false;
};

/// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps
/// near-zero gradients from producing meaningless ratios.
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Compares backward() against central differences of a scalar function of
/// one tensor. `point` is copied; the copy is the leaf handed to `f`.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double step,
                           double tolerance);

/// Same check over tensors that `loss` reads implicitly (model parameters).
/// Values are perturbed in place and restored; grads of `params` are reset.
GradCheckReport grad_check_params(const std::function<Tensor()>& loss, std::vector<Tensor> params, double step,
                                  double tolerance);

}  // namespace kedd::ad
