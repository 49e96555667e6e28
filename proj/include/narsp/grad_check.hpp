// Copyright 2026 The narsp Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "narsp/tensor.hpp"

namespace narsp {

struct GradCheckReport {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = true;
};

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-3;
  /// Denominator floor so that gradients which are zero up to rounding
  /// compare on an absolute scale.
  double abs_floor = 1e-6;
  /// Check at most this many entries per parameter (0 = all), chosen by
  /// a fixed stride.
  std::size_t max_per_param = 0;
};

/// Compares reverse-mode gradients of `loss_fn` with central differences
/// (f(x+h) - f(x-h)) / 2h. `loss_fn` must build its graph from `params`
/// each call and return a scalar.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& loss_fn,
                                  std::vector<Tensor<double>> params,
                                  const GradCheckOptions& opt = {}) {
  for (auto& p : params) p.zero_grad();
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> loss = loss_fn();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    auto g = p.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(p.numel(), 0.0);
  }

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double>& p = params[pi];
    const std::size_t n = p.numel();
    const std::size_t stride =
        (opt.max_per_param == 0 || n <= opt.max_per_param) ? 1 : (n + opt.max_per_param - 1) / opt.max_per_param;
    for (std::size_t i = 0; i < n; i += stride) {
      double* w = p.mutable_data().data() + i;
      const double saved = *w;
      *w = saved + opt.h;
      const double up = loss_fn().item();
      *w = saved - opt.h;
      const double down = loss_fn().item();
      *w = saved;
      const double numeric = (up - down) / (2.0 * opt.h);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = pi;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error <= opt.tol;
  return report;
}

}  // namespace narsp
