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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "narsp/rng.hpp"
#include "narsp/tensor.hpp"

namespace narsp {

/// A learned tensor plus its Adam state. The gradient accumulator is the
/// tensor's own grad buffer.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  std::vector<T> m;
  std::vector<T> v;
  std::int64_t step = 0;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update; a parameter without gradient is left alone
/// apart from its step count.
template <typename T>
void adam_step(Parameter<T>& p, const AdamOptions& opt) {
  const std::size_t n = p.value.numel();
  if (p.m.size() != n) p.m.assign(n, T(0));
  if (p.v.size() != n) p.v.assign(n, T(0));
  ++p.step;
  const auto g = p.value.grad();
  if (g.empty()) return;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(p.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(p.step));
  T* w = p.value.mutable_data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double gi = static_cast<double>(g[i]);
    const double m = opt.beta1 * static_cast<double>(p.m[i]) + (1.0 - opt.beta1) * gi;
    const double v = opt.beta2 * static_cast<double>(p.v[i]) + (1.0 - opt.beta2) * gi * gi;
    p.m[i] = static_cast<T>(m);
    p.v[i] = static_cast<T>(v);
    const double update = opt.lr * (m / c1) / (std::sqrt(v / c2) + opt.eps);
    w[i] = static_cast<T>(static_cast<double>(w[i]) - update);
  }
}

/// Ordered registry of named parameters. Registration order is the
/// checkpoint order and the order initializers consume random draws.
template <typename T>
class ParameterStore {
 public:
  Tensor<T> add(std::string name, Shape shape, std::vector<T> init) {
    Tensor<T> t = Tensor<T>::leaf(std::move(shape), std::move(init));
    params_.push_back(Parameter<T>{std::move(name), t, {}, {}, 0});
    return t;
  }

  /// Uniform(-limit, limit) draws.
  Tensor<T> add_uniform(std::string name, Shape shape, double limit, Rng& rng) {
    std::vector<T> data(shape_numel(shape));
    for (T& x : data) x = static_cast<T>(rng.uniform(-limit, limit));
    return add(std::move(name), std::move(shape), std::move(data));
  }

  /// Xavier-uniform for a [fan_in, fan_out] matrix.
  Tensor<T> add_xavier(std::string name, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return add_uniform(std::move(name), Shape{fan_in, fan_out}, limit, rng);
  }

  Tensor<T> add_constant(std::string name, Shape shape, T fill) {
    std::vector<T> data(shape_numel(shape), fill);
    return add(std::move(name), std::move(shape), std::move(data));
  }

  std::vector<Parameter<T>>& all() { return params_; }
  const std::vector<Parameter<T>>& all() const { return params_; }

  const Parameter<T>* find(const std::string& name) const {
    for (const auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
  }

 private:
  std::vector<Parameter<T>> params_;
};

}  // namespace narsp
