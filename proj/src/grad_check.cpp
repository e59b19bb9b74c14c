// Copyright (c) 2026, The kedd-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "kedd/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace kedd::ad {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

void finalize(GradCheckReport& r, double tolerance) {
  r.relative_error.resize(r.analytic.size());
  for (std::size_t i = 0; i < r.analytic.size(); ++i) {
    const double a = r.analytic[i];
    const double n = r.numeric[i];
    if (!std::isfinite(a) || !std::isfinite(n)) {
      if (!r.non_finite_index) r.non_finite_index = i;
      r.relative_error[i] = std::numeric_limits<double>::infinity();
      continue;
    }
    r.relative_error[i] = relative_error(a, n);
    if (r.relative_error[i] > r.max_relative_error) {
      r.max_relative_error = r.relative_error[i];
      r.worst_index = i;
    }
  }
  r.passed = !r.non_finite_index && r.max_relative_error < tolerance;
}

double eval_scalar(const Tensor& t) {
  if (t.numel() != 1) throw ShapeError("grad_check: function must be scalar-valued, got " + shape_str(t.shape()));
  return t.item();
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double step,
                           double tolerance) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  GradCheckReport report;
  Tensor x = Tensor::from(point.shape(), std::vector<double>(point.values().begin(), point.values().end()), true);
  Tensor y = f(x);
  eval_scalar(y);
  backward(y);
  report.analytic = x.grad();

  std::vector<double> base(point.values().begin(), point.values().end());
  report.numeric.resize(base.size());
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto probe = base;
    probe[i] = base[i] + step;
    const double fp = eval_scalar(f(Tensor::from(point.shape(), probe)));
    probe[i] = base[i] - step;
    const double fm = eval_scalar(f(Tensor::from(point.shape(), probe)));
    report.numeric[i] = (fp - fm) / (2.0 * step);
  }
  finalize(report, tolerance);
  return report;
}

GradCheckReport grad_check_params(const std::function<Tensor()>& loss, std::vector<Tensor> params, double step,
                                  double tolerance) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  GradCheckReport report;
  for (auto& p : params) p.zero_grad();
  backward(loss());
  for (auto& p : params) {
    const auto g = p.grad();
    report.analytic.insert(report.analytic.end(), g.begin(), g.end());
    p.zero_grad();
  }
  NoGradGuard no_grad;
  for (auto& p : params) {
    auto vals = p.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + step;
      const double fp = eval_scalar(loss());
      vals[i] = orig - step;
      const double fm = eval_scalar(loss());
      vals[i] = orig;
      report.numeric.push_back((fp - fm) / (2.0 * step));
    }
  }
  finalize(report, tolerance);
  return report;
}

}  // namespace kedd::ad
