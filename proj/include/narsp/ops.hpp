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
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "narsp/tensor.hpp"

// Differentiable primitives. Each op computes its forward value eagerly and,
// when a tape is active and an input requires gradients, records a closure
// that accumulates input gradients from the output gradient.

namespace narsp {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

inline void require_mask(const Mask& mask, const Shape& shape, const char* what) {
  if (!mask.empty() && mask.shape != shape) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": mask " + shape_str(mask.shape) +
                                              " vs " + shape_str(shape));
  }
}

inline Shape drop_last(const Shape& s) { return Shape(s.begin(), s.end() - 1); }

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
                  "add " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  T* y = out.mutable_data().data();
  const T* av = a.data().data();
  const T* bv = b.data().data();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) y[i] = av[i] + bv[i];
  if (detail::tracking({&a, &b})) {
    auto an = a.node(), bn = b.node();
    auto* o = out.node().get();
    detail::attach(out, [an, bn, o, n] {
      const T* g = o->grad.data();
      if (an->requires_grad) {
        T* ga = an->grad_data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (bn->requires_grad) {
        T* gb = bn->grad_data();
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
                  "mul " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  T* y = out.mutable_data().data();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
  if (detail::tracking({&a, &b})) {
    auto an = a.node(), bn = b.node();
    auto* o = out.node().get();
    detail::attach(out, [an, bn, o, n] {
      const T* g = o->grad.data();
      if (an->requires_grad) {
        T* ga = an->grad_data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        T* gb = bn->grad_data();
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * an->value[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape());
  T* y = out.mutable_data().data();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * factor;
  if (detail::tracking({&a})) {
    auto an = a.node();
    auto* o = out.node().get();
    detail::attach(out, [an, o, n, factor] {
      T* ga = an->grad_data();
      for (std::size_t i = 0; i < n; ++i) ga[i] += o->grad[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.data()) total += v;
  Tensor<T> out = Tensor<T>::scalar(total);
  if (detail::tracking({&a})) {
    auto an = a.node();
    auto* o = out.node().get();
    detail::attach(out, [an, o] {
      T* ga = an->grad_data();
      const T g = o->grad[0];
      for (std::size_t i = 0; i < an->value.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  detail::require(shape_numel(shape) == a.numel(), ErrorCode::ShapeMismatch,
                  "reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Tensor<T> out(std::move(shape), a.values());
  if (detail::tracking({&a})) {
    auto an = a.node();
    auto* o = out.node().get();
    detail::attach(out, [an, o] {
      T* ga = an->grad_data();
      for (std::size_t i = 0; i < o->grad.size(); ++i) ga[i] += o->grad[i];
    });
  }
  return out;
}

/// y = x W + b over the last dimension of x.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require(x.rank() >= 1 && w.rank() == 2 && b.rank() == 1, ErrorCode::ShapeMismatch,
                  "linear expects x[*,in], W[in,out], b[out]");
  const std::size_t din = x.shape().back();
  const std::size_t dout = w.dim(1);
  detail::require(w.dim(0) == din && b.dim(0) == dout, ErrorCode::ShapeMismatch,
                  "linear " + shape_str(x.shape()) + " x " + shape_str(w.shape()) + " + " +
                      shape_str(b.shape()));
  const std::size_t rows = x.numel() / din;
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  Tensor<T> out(out_shape);
  {
    detail::ConstMatMap<T> X(x.data().data(), rows, din);
    detail::ConstMatMap<T> W(w.data().data(), din, dout);
    detail::MatMap<T> Y(out.mutable_data().data(), rows, dout);
    Y.noalias() = X * W;
    const T* bias = b.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
      T* row = out.mutable_data().data() + r * dout;
      for (std::size_t c = 0; c < dout; ++c) row[c] += bias[c];
    }
  }
  if (detail::tracking({&x, &w, &b})) {
    auto xn = x.node(), wn = w.node(), bn = b.node();
    auto* o = out.node().get();
    detail::attach(out, [xn, wn, bn, o, rows, din, dout] {
      detail::ConstMatMap<T> G(o->grad.data(), rows, dout);
      if (xn->requires_grad) {
        detail::ConstMatMap<T> W(wn->value.data(), din, dout);
        detail::MatMap<T>(xn->grad_data(), rows, din).noalias() += G * W.transpose();
      }
      if (wn->requires_grad) {
        detail::ConstMatMap<T> X(xn->value.data(), rows, din);
        detail::MatMap<T>(wn->grad_data(), din, dout).noalias() += X.transpose() * G;
      }
      if (bn->requires_grad) {
        T* gb = bn->grad_data();
        for (std::size_t r = 0; r < rows; ++r) {
          const T* g = o->grad.data() + r * dout;
          for (std::size_t c = 0; c < dout; ++c) gb[c] += g[c];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  T* y = out.mutable_data().data();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  if (detail::tracking({&x})) {
    auto xn = x.node();
    auto* o = out.node().get();
    detail::attach(out, [xn, o, n] {
      T* gx = xn->grad_data();
      for (std::size_t i = 0; i < n; ++i) {
        if (xn->value[i] > T(0)) gx[i] += o->grad[i];
      }
    });
  }
  return out;
}

/// Gated linear unit: splits the last dimension into [a; b], returns a * sigmoid(b).
template <typename T>
Tensor<T> glu(const Tensor<T>& x) {
  const std::size_t two_d = x.shape().back();
  if (two_d % 2 != 0) {
    throw Error(ErrorCode::OddDim, "glu needs an even last dimension, got " + std::to_string(two_d));
  }
  const std::size_t d = two_d / 2;
  const std::size_t rows = x.numel() / two_d;
  Shape out_shape = x.shape();
  out_shape.back() = d;
  Tensor<T> out(out_shape);
  std::vector<T> gate(rows * d);
  const T* xv = x.data().data();
  T* y = out.mutable_data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const T s = detail::sigmoid(xv[r * two_d + d + c]);
      gate[r * d + c] = s;
      y[r * d + c] = xv[r * two_d + c] * s;
    }
  }
  if (detail::tracking({&x})) {
    auto xn = x.node();
    auto* o = out.node().get();
    detail::attach(out, [xn, o, rows, d, two_d, gate = std::move(gate)] {
      T* gx = xn->grad_data();
      const T* xv = xn->value.data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
          const T g = o->grad[r * d + c];
          const T s = gate[r * d + c];
          gx[r * two_d + c] += g * s;
          gx[r * two_d + d + c] += g * xv[r * two_d + c] * s * (T(1) - s);
        }
      }
    });
  }
  return out;
}

/// Per-row normalization over the last dimension followed by an affine map.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5)) {
  const std::size_t d = x.shape().back();
  detail::require(gain.numel() == d && bias.numel() == d, ErrorCode::ShapeMismatch,
                  "layer_norm gain/bias must have " + std::to_string(d) + " entries");
  const std::size_t rows = x.numel() / d;
  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(rows);
  const T* xv = x.data().data();
  T* y = out.mutable_data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv + r * d;
    T mean = T(0);
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= T(d);
    T var = T(0);
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= T(d);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t c = 0; c < d; ++c) {
      const T h = (row[c] - mean) * inv;
      xhat[r * d + c] = h;
      y[r * d + c] = h * gain[c] + bias[c];
    }
  }
  if (detail::tracking({&x, &gain, &bias})) {
    auto xn = x.node(), gn = gain.node(), bn = bias.node();
    auto* o = out.node().get();
    detail::attach(out, [xn, gn, bn, o, rows, d, xhat = std::move(xhat),
                         inv_std = std::move(inv_std)] {
      const T* g = o->grad.data();
      if (gn->requires_grad || bn->requires_grad) {
        T* gg = gn->requires_grad ? gn->grad_data() : nullptr;
        T* gb = bn->requires_grad ? bn->grad_data() : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < d; ++c) {
            if (gg) gg[c] += g[r * d + c] * xhat[r * d + c];
            if (gb) gb[c] += g[r * d + c];
          }
        }
      }
      if (xn->requires_grad) {
        T* gx = xn->grad_data();
        const T* gain_v = gn->value.data();
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_dh = T(0), mean_dh_h = T(0);
          for (std::size_t c = 0; c < d; ++c) {
            const T dh = g[r * d + c] * gain_v[c];
            mean_dh += dh;
            mean_dh_h += dh * xhat[r * d + c];
          }
          mean_dh /= T(d);
          mean_dh_h /= T(d);
          for (std::size_t c = 0; c < d; ++c) {
            const T dh = g[r * d + c] * gain_v[c];
            gx[r * d + c] += inv_std[r] * (dh - mean_dh - xhat[r * d + c] * mean_dh_h);
          }
        }
      }
    });
  }
  return out;
}

/// Softmax over the last dimension; masked entries get probability exactly 0.
/// An empty mask means every entry participates.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& scores, const Mask& mask = {}) {
  detail::require_mask(mask, scores.shape(), "masked_softmax");
  const std::size_t n = scores.shape().back();
  const std::size_t rows = scores.numel() / n;
  Tensor<T> out(scores.shape());
  const T* x = scores.data().data();
  T* y = out.mutable_data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask.empty() || mask[r * n + j]) {
        mx = std::max(mx, x[r * n + j]);
        any = true;
      }
    }
    if (!any) throw Error(ErrorCode::AllMasked, "softmax row " + std::to_string(r) + " fully masked");
    T z = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      const bool keep = mask.empty() || mask[r * n + j];
      const T e = keep ? std::exp(x[r * n + j] - mx) : T(0);
      y[r * n + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] /= z;
  }
  if (detail::tracking({&scores})) {
    auto xn = scores.node();
    auto* o = out.node().get();
    detail::attach(out, [xn, o, rows, n] {
      T* gx = xn->grad_data();
      const T* y = o->value.data();
      const T* g = o->grad.data();
      for (std::size_t r = 0; r < rows; ++r) {
        T dot = T(0);
        for (std::size_t j = 0; j < n; ++j) dot += y[r * n + j] * g[r * n + j];
        for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
      }
    });
  }
  return out;
}

enum class ConvPadding { Symmetric, Causal };

/// Lightweight convolution: depthwise 1-D convolution over time whose
/// kernels are shared by channel groups. `kernel_logits` is [H, k]; each row
/// is softmax-normalized over its taps and channel c of x[B, T, d] uses row
/// c * H / d. Padded time steps are zeroed before convolving and in the
/// output. Symmetric padding looks both ways; causal only looks back.
template <typename T>
Tensor<T> conv1d_depthwise_shared(const Tensor<T>& x, const Tensor<T>& kernel_logits,
                                  const Mask& pad_mask = {},
                                  ConvPadding padding = ConvPadding::Symmetric) {
  detail::require(x.rank() == 3 && kernel_logits.rank() == 2, ErrorCode::ShapeMismatch,
                  "conv expects x[B,T,d] and kernels[H,k]");
  const std::size_t B = x.dim(0), Tn = x.dim(1), d = x.dim(2);
  const std::size_t H = kernel_logits.dim(0), k = kernel_logits.dim(1);
  detail::require(H >= 1 && d % H == 0, ErrorCode::ShapeMismatch,
                  "channels " + std::to_string(d) + " not divisible by heads " + std::to_string(H));
  detail::require_mask(pad_mask, Shape{B, Tn}, "conv1d_depthwise_shared");
  const std::size_t left = padding == ConvPadding::Causal ? k - 1 : (k - 1) / 2;

  std::vector<T> w(H * k);
  for (std::size_t h = 0; h < H; ++h) {
    const T* lg = kernel_logits.data().data() + h * k;
    const T mx = *std::max_element(lg, lg + k);
    T z = T(0);
    for (std::size_t j = 0; j < k; ++j) z += (w[h * k + j] = std::exp(lg[j] - mx));
    for (std::size_t j = 0; j < k; ++j) w[h * k + j] /= z;
  }
  auto valid = [&pad_mask, Tn](std::size_t b, std::size_t t) {
    return pad_mask.empty() || pad_mask[b * Tn + t];
  };

  Tensor<T> out(x.shape());
  const T* xv = x.data().data();
  T* y = out.mutable_data().data();
  const std::size_t group = d / H;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < Tn; ++t) {
      if (!valid(b, t)) continue;
      T* yrow = y + (b * Tn + t) * d;
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(left);
        if (s < 0 || s >= static_cast<std::ptrdiff_t>(Tn) || !valid(b, static_cast<std::size_t>(s))) continue;
        const T* xrow = xv + (b * Tn + static_cast<std::size_t>(s)) * d;
        for (std::size_t h = 0; h < H; ++h) {
          const T wj = w[h * k + j];
          for (std::size_t c = h * group; c < (h + 1) * group; ++c) yrow[c] += wj * xrow[c];
        }
      }
    }
  }

  if (detail::tracking({&x, &kernel_logits})) {
    auto xn = x.node(), kn = kernel_logits.node();
    auto* o = out.node().get();
    detail::attach(out, [xn, kn, o, pad_mask, w = std::move(w), B, Tn, d, H, k, left, group] {
      auto valid = [&pad_mask, Tn](std::size_t b, std::size_t t) {
        return pad_mask.empty() || pad_mask[b * Tn + t];
      };
      const T* g = o->grad.data();
      const T* xv = xn->value.data();
      T* gx = xn->requires_grad ? xn->grad_data() : nullptr;
      std::vector<T> gw(H * k, T(0));
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < Tn; ++t) {
          if (!valid(b, t)) continue;
          const T* grow = g + (b * Tn + t) * d;
          for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(left);
            if (s < 0 || s >= static_cast<std::ptrdiff_t>(Tn) || !valid(b, static_cast<std::size_t>(s))) continue;
            const std::size_t off = (b * Tn + static_cast<std::size_t>(s)) * d;
            for (std::size_t h = 0; h < H; ++h) {
              const T wj = w[h * k + j];
              T acc = T(0);
              for (std::size_t c = h * group; c < (h + 1) * group; ++c) {
                acc += grow[c] * xv[off + c];
                if (gx) gx[off + c] += wj * grow[c];
              }
              gw[h * k + j] += acc;
            }
          }
        }
      }
      if (kn->requires_grad) {
        T* gk = kn->grad_data();
        for (std::size_t h = 0; h < H; ++h) {
          T dot = T(0);
          for (std::size_t j = 0; j < k; ++j) dot += w[h * k + j] * gw[h * k + j];
          for (std::size_t j = 0; j < k; ++j) gk[h * k + j] += w[h * k + j] * (gw[h * k + j] - dot);
        }
      }
    });
  }
  return out;
}

/// Gathers rows of `table` [V, d]; output shape is ids_shape + [d].
template <typename T>
Tensor<T> embedding(const std::vector<std::int32_t>& ids, const Shape& ids_shape,
                    const Tensor<T>& table) {
  detail::require(table.rank() == 2 && shape_numel(ids_shape) == ids.size(),
                  ErrorCode::ShapeMismatch, "embedding expects table[V,d] and matching ids");
  const std::size_t V = table.dim(0), d = table.dim(1);
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= V) {
      throw Error(ErrorCode::IndexOutOfRange,
                  "embedding id " + std::to_string(id) + " outside [0," + std::to_string(V) + ")");
    }
  }
  Shape out_shape = ids_shape;
  out_shape.push_back(d);
  Tensor<T> out(out_shape);
  T* y = out.mutable_data().data();
  const T* tv = table.data().data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(tv + static_cast<std::size_t>(ids[i]) * d, d, y + i * d);
  }
  if (detail::tracking({&table})) {
    auto tn = table.node();
    auto* o = out.node().get();
    detail::attach(out, [tn, o, ids, d] {
      T* gt = tn->grad_data();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        T* row = gt + static_cast<std::size_t>(ids[i]) * d;
        const T* g = o->grad.data() + i * d;
        for (std::size_t c = 0; c < d; ++c) row[c] += g[c];
      }
    });
  }
  return out;
}

/// Concatenates along the last dimension.
template <typename T>
Tensor<T> concat_last(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.rank() == b.rank() && a.rank() >= 1 &&
                      detail::drop_last(a.shape()) == detail::drop_last(b.shape()),
                  ErrorCode::ShapeMismatch,
                  "concat " + shape_str(a.shape()) + " ++ " + shape_str(b.shape()));
  const std::size_t da = a.shape().back(), db = b.shape().back(), dc = da + db;
  const std::size_t rows = a.numel() / std::max<std::size_t>(da, 1);
  Shape out_shape = a.shape();
  out_shape.back() = dc;
  Tensor<T> out(out_shape);
  T* y = out.mutable_data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().data() + r * da, da, y + r * dc);
    std::copy_n(b.data().data() + r * db, db, y + r * dc + da);
  }
  if (detail::tracking({&a, &b})) {
    auto an = a.node(), bn = b.node();
    auto* o = out.node().get();
    detail::attach(out, [an, bn, o, rows, da, db, dc] {
      const T* g = o->grad.data();
      T* ga = an->requires_grad ? an->grad_data() : nullptr;
      T* gb = bn->requires_grad ? bn->grad_data() : nullptr;
      for (std::size_t r = 0; r < rows; ++r) {
        if (ga) for (std::size_t c = 0; c < da; ++c) ga[r * da + c] += g[r * dc + c];
        if (gb) for (std::size_t c = 0; c < db; ++c) gb[r * db + c] += g[r * dc + da + c];
      }
    });
  }
  return out;
}

/// Zeroes every last-dimension row whose mask entry is 0. The mask shape is
/// x's shape without the last dimension.
template <typename T>
Tensor<T> mask_rows(const Tensor<T>& x, const Mask& mask) {
  if (mask.empty()) return x;
  detail::require_mask(mask, detail::drop_last(x.shape()), "mask_rows");
  const std::size_t d = x.shape().back();
  Tensor<T> out(x.shape(), x.values());
  T* y = out.mutable_data().data();
  for (std::size_t r = 0; r < mask.keep.size(); ++r) {
    if (!mask.keep[r]) std::fill_n(y + r * d, d, T(0));
  }
  if (detail::tracking({&x})) {
    auto xn = x.node();
    auto* o = out.node().get();
    detail::attach(out, [xn, o, mask, d] {
      T* gx = xn->grad_data();
      for (std::size_t r = 0; r < mask.keep.size(); ++r) {
        if (!mask.keep[r]) continue;
        for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += o->grad[r * d + c];
      }
    });
  }
  return out;
}

/// Mean over valid time steps: x[B, L, c], mask[B, L] -> [B, c].
template <typename T>
Tensor<T> mean_pool_masked(const Tensor<T>& x, const Mask& mask = {}) {
  detail::require(x.rank() == 3, ErrorCode::ShapeMismatch, "mean_pool expects x[B,L,c]");
  const std::size_t B = x.dim(0), L = x.dim(1), c = x.dim(2);
  detail::require_mask(mask, Shape{B, L}, "mean_pool_masked");
  Tensor<T> out(Shape{B, c});
  std::vector<T> inv_count(B);
  T* y = out.mutable_data().data();
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t count = 0;
    for (std::size_t t = 0; t < L; ++t) {
      if (!mask.empty() && !mask[b * L + t]) continue;
      ++count;
      const T* row = x.data().data() + (b * L + t) * c;
      for (std::size_t j = 0; j < c; ++j) y[b * c + j] += row[j];
    }
    if (count == 0) throw Error(ErrorCode::AllMasked, "mean_pool row " + std::to_string(b));
    inv_count[b] = T(1) / T(count);
    for (std::size_t j = 0; j < c; ++j) y[b * c + j] *= inv_count[b];
  }
  if (detail::tracking({&x})) {
    auto xn = x.node();
    auto* o = out.node().get();
    detail::attach(out, [xn, o, mask, inv_count = std::move(inv_count), B, L, c] {
      T* gx = xn->grad_data();
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < L; ++t) {
          if (!mask.empty() && !mask[b * L + t]) continue;
          for (std::size_t j = 0; j < c; ++j) gx[(b * L + t) * c + j] += o->grad[b * c + j] * inv_count[b];
        }
      }
    });
  }
  return out;
}

/// Multi-head scaled dot-product attention without projections:
/// q[B, Lq, D], k/v[B, Lk, D] -> [B, Lq, D]. `key_mask` is [B, Lk]; there is
/// no causal mask.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                    const Mask& key_mask = {}) {
  detail::require(q.rank() == 3 && k.rank() == 3 && v.shape() == k.shape() &&
                      q.dim(0) == k.dim(0) && q.dim(2) == k.dim(2),
                  ErrorCode::ShapeMismatch,
                  "attention q" + shape_str(q.shape()) + " k" + shape_str(k.shape()) + " v" +
                      shape_str(v.shape()));
  const std::size_t B = q.dim(0), Lq = q.dim(1), Lk = k.dim(1), D = q.dim(2);
  detail::require(heads >= 1 && D % heads == 0, ErrorCode::ShapeMismatch,
                  "model dim " + std::to_string(D) + " not divisible by " + std::to_string(heads));
  detail::require_mask(key_mask, Shape{B, Lk}, "attention");
  const std::size_t dh = D / heads;
  const T scl = T(1) / std::sqrt(T(dh));
  std::vector<T> probs(B * heads * Lq * Lk, T(0));
  Tensor<T> out(Shape{B, Lq, D});
  const T* qv = q.data().data();
  const T* kv = k.data().data();
  const T* vv = v.data().data();
  T* y = out.mutable_data().data();
  std::vector<T> row(Lk);
  for (std::size_t b = 0; b < B; ++b) {
    bool any = key_mask.empty();
    for (std::size_t j = 0; j < Lk && !any; ++j) any = key_mask[b * Lk + j];
    if (!any) throw Error(ErrorCode::AllMasked, "attention batch row " + std::to_string(b));
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < Lq; ++i) {
        const T* qi = qv + (b * Lq + i) * D + h * dh;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < Lk; ++j) {
          if (!key_mask.empty() && !key_mask[b * Lk + j]) continue;
          const T* kj = kv + (b * Lk + j) * D + h * dh;
          T s = T(0);
          for (std::size_t e = 0; e < dh; ++e) s += qi[e] * kj[e];
          row[j] = s * scl;
          mx = std::max(mx, row[j]);
        }
        T* p = probs.data() + ((b * heads + h) * Lq + i) * Lk;
        T z = T(0);
        for (std::size_t j = 0; j < Lk; ++j) {
          if (!key_mask.empty() && !key_mask[b * Lk + j]) continue;
          z += (p[j] = std::exp(row[j] - mx));
        }
        T* yi = y + (b * Lq + i) * D + h * dh;
        for (std::size_t j = 0; j < Lk; ++j) {
          if (p[j] == T(0)) continue;
          p[j] /= z;
          const T* vj = vv + (b * Lk + j) * D + h * dh;
          for (std::size_t e = 0; e < dh; ++e) yi[e] += p[j] * vj[e];
        }
      }
    }
  }
  if (detail::tracking({&q, &k, &v})) {
    auto qn = q.node(), kn = k.node(), vn = v.node();
    auto* o = out.node().get();
    detail::attach(out, [qn, kn, vn, o, probs = std::move(probs), B, Lq, Lk, D, heads, dh, scl] {
      const T* g = o->grad.data();
      const T* qv = qn->value.data();
      const T* kv = kn->value.data();
      const T* vv = vn->value.data();
      T* gq = qn->requires_grad ? qn->grad_data() : nullptr;
      T* gk = kn->requires_grad ? kn->grad_data() : nullptr;
      T* gv = vn->requires_grad ? vn->grad_data() : nullptr;
      std::vector<T> dp(Lk);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
          for (std::size_t i = 0; i < Lq; ++i) {
            const T* p = probs.data() + ((b * heads + h) * Lq + i) * Lk;
            const T* gi = g + (b * Lq + i) * D + h * dh;
            T dot = T(0);
            for (std::size_t j = 0; j < Lk; ++j) {
              if (p[j] == T(0)) { dp[j] = T(0); continue; }
              const T* vj = vv + (b * Lk + j) * D + h * dh;
              T s = T(0);
              for (std::size_t e = 0; e < dh; ++e) s += gi[e] * vj[e];
              dp[j] = s;
              dot += p[j] * s;
              if (gv) {
                T* gvj = gv + (b * Lk + j) * D + h * dh;
                for (std::size_t e = 0; e < dh; ++e) gvj[e] += p[j] * gi[e];
              }
            }
            const T* qi = qv + (b * Lq + i) * D + h * dh;
            T* gqi = gq ? gq + (b * Lq + i) * D + h * dh : nullptr;
            for (std::size_t j = 0; j < Lk; ++j) {
              if (p[j] == T(0)) continue;
              const T ds = p[j] * (dp[j] - dot) * scl;
              const T* kj = kv + (b * Lk + j) * D + h * dh;
              if (gqi) for (std::size_t e = 0; e < dh; ++e) gqi[e] += ds * kj[e];
              if (gk) {
                T* gkj = gk + (b * Lk + j) * D + h * dh;
                for (std::size_t e = 0; e < dh; ++e) gkj[e] += ds * qi[e];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

/// Copy logits of the pointer head: q[B, T, D] against k[B, L, D] with
/// `heads` heads, combined as log(mean_h exp(s_h)) where s_h is the scaled
/// per-head dot product. Masked keys get -inf. Output is [B, T, L].
template <typename T>
Tensor<T> copy_scores(const Tensor<T>& q, const Tensor<T>& k, std::size_t heads,
                      const Mask& key_mask = {}) {
  detail::require(q.rank() == 3 && k.rank() == 3 && q.dim(0) == k.dim(0) && q.dim(2) == k.dim(2),
                  ErrorCode::ShapeMismatch,
                  "copy_scores q" + shape_str(q.shape()) + " k" + shape_str(k.shape()));
  const std::size_t B = q.dim(0), Tn = q.dim(1), L = k.dim(1), D = q.dim(2);
  detail::require(heads >= 1 && D % heads == 0, ErrorCode::ShapeMismatch,
                  "model dim " + std::to_string(D) + " not divisible by " + std::to_string(heads));
  detail::require_mask(key_mask, Shape{B, L}, "copy_scores");
  const std::size_t dh = D / heads;
  const T scl = T(1) / std::sqrt(T(dh));
  const T log_h = std::log(T(heads));
  Tensor<T> out(Shape{B, Tn, L});
  std::vector<T> resp(B * Tn * L * heads, T(0));
  std::vector<T> s(heads);
  const T* qv = q.data().data();
  const T* kv = k.data().data();
  T* y = out.mutable_data().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < Tn; ++i) {
      for (std::size_t j = 0; j < L; ++j) {
        const std::size_t idx = (b * Tn + i) * L + j;
        if (!key_mask.empty() && !key_mask[b * L + j]) {
          y[idx] = -std::numeric_limits<T>::infinity();
          continue;
        }
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t h = 0; h < heads; ++h) {
          const T* qi = qv + (b * Tn + i) * D + h * dh;
          const T* kj = kv + (b * L + j) * D + h * dh;
          T acc = T(0);
          for (std::size_t e = 0; e < dh; ++e) acc += qi[e] * kj[e];
          s[h] = acc * scl;
          mx = std::max(mx, s[h]);
        }
        T z = T(0);
        for (std::size_t h = 0; h < heads; ++h) z += std::exp(s[h] - mx);
        const T lse = mx + std::log(z);
        y[idx] = lse - log_h;
        for (std::size_t h = 0; h < heads; ++h) resp[idx * heads + h] = std::exp(s[h] - lse);
      }
    }
  }
  if (detail::tracking({&q, &k})) {
    auto qn = q.node(), kn = k.node();
    auto* o = out.node().get();
    detail::attach(out, [qn, kn, o, key_mask, resp = std::move(resp), B, Tn, L, D, heads, dh, scl] {
      const T* qv = qn->value.data();
      const T* kv = kn->value.data();
      T* gq = qn->requires_grad ? qn->grad_data() : nullptr;
      T* gk = kn->requires_grad ? kn->grad_data() : nullptr;
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t i = 0; i < Tn; ++i) {
          for (std::size_t j = 0; j < L; ++j) {
            if (!key_mask.empty() && !key_mask[b * L + j]) continue;
            const std::size_t idx = (b * Tn + i) * L + j;
            const T g = o->grad[idx];
            if (g == T(0)) continue;
            for (std::size_t h = 0; h < heads; ++h) {
              const T ds = g * resp[idx * heads + h] * scl;
              const T* qi = qv + (b * Tn + i) * D + h * dh;
              const T* kj = kv + (b * L + j) * D + h * dh;
              if (gq) {
                T* gqi = gq + (b * Tn + i) * D + h * dh;
                for (std::size_t e = 0; e < dh; ++e) gqi[e] += ds * kj[e];
              }
              if (gk) {
                T* gkj = gk + (b * L + j) * D + h * dh;
                for (std::size_t e = 0; e < dh; ++e) gkj[e] += ds * qi[e];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

/// Mean over rows of -sum_v q_v log p_v with q = (1 - beta) onehot(target) +
/// beta * uniform over the row's valid classes. Rows with target < 0 are
/// ignored. `class_mask` (same shape as logits, optional) removes classes
/// from both the softmax and the uniform term.
template <typename T>
Tensor<T> label_smoothed_ce(const Tensor<T>& logits, const std::vector<std::int32_t>& targets,
                            double beta, const Mask& class_mask = {}) {
  if (!(beta >= 0.0 && beta < 1.0)) {
    throw Error(ErrorCode::InvalidBeta, "beta must be in [0, 1), got " + std::to_string(beta));
  }
  detail::require(logits.rank() >= 1, ErrorCode::ShapeMismatch, "label_smoothed_ce on a scalar");
  detail::require_mask(class_mask, logits.shape(), "label_smoothed_ce");
  const std::size_t V = logits.shape().back();
  const std::size_t rows = logits.numel() / V;
  detail::require(targets.size() == rows, ErrorCode::ShapeMismatch,
                  std::to_string(targets.size()) + " targets for " + std::to_string(rows) + " rows");
  auto keep = [&class_mask, V](std::size_t r, std::size_t v) {
    return class_mask.empty() || class_mask[r * V + v];
  };
  const T* x = logits.data().data();
  std::vector<T> probs(rows * V, T(0));
  std::vector<std::size_t> valid_count(rows, 0);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::int32_t tgt = targets[r];
    if (tgt < 0) continue;
    if (static_cast<std::size_t>(tgt) >= V || !keep(r, static_cast<std::size_t>(tgt))) {
      throw Error(ErrorCode::IndexOutOfRange,
                  "target " + std::to_string(tgt) + " is not a valid class of row " + std::to_string(r));
    }
    T mx = -std::numeric_limits<T>::infinity();
    std::size_t nv = 0;
    for (std::size_t v = 0; v < V; ++v) {
      if (!keep(r, v)) continue;
      mx = std::max(mx, x[r * V + v]);
      ++nv;
    }
    T z = T(0);
    for (std::size_t v = 0; v < V; ++v) {
      if (keep(r, v)) z += std::exp(x[r * V + v] - mx);
    }
    const T lse = mx + std::log(z);
    const double uniform = beta / static_cast<double>(nv);
    double row_loss = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      if (!keep(r, v)) continue;
      const T logp = x[r * V + v] - lse;
      probs[r * V + v] = std::exp(logp);
      const double qv = uniform + (v == static_cast<std::size_t>(tgt) ? 1.0 - beta : 0.0);
      row_loss -= qv * static_cast<double>(logp);
    }
    valid_count[r] = nv;
    total += row_loss;
    ++counted;
  }
  Tensor<T> out = Tensor<T>::scalar(counted ? static_cast<T>(total / static_cast<double>(counted)) : T(0));
  if (counted && detail::tracking({&logits})) {
    auto xn = logits.node();
    auto* o = out.node().get();
    detail::attach(out, [xn, o, targets, beta, rows, V, counted, class_mask,
                         probs = std::move(probs), valid_count = std::move(valid_count)] {
      T* gx = xn->grad_data();
      const T g = o->grad[0] / static_cast<T>(counted);
      for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] < 0) continue;
        const T uniform = static_cast<T>(beta / static_cast<double>(valid_count[r]));
        for (std::size_t v = 0; v < V; ++v) {
          if (!class_mask.empty() && !class_mask[r * V + v]) continue;
          const T p = probs[r * V + v];
          T qv = uniform;
          if (v == static_cast<std::size_t>(targets[r])) qv += static_cast<T>(1.0 - beta);
          gx[r * V + v] += g * (p - qv);
        }
      }
    });
  }
  return out;
}

}  // namespace narsp
