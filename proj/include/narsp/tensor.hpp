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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "narsp/error.hpp"

namespace narsp {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Boolean validity mask; 1 = position participates.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> keep;

  Mask() = default;
  Mask(Shape s, std::uint8_t fill) : shape(std::move(s)), keep(shape_numel(shape), fill) {}
  Mask(Shape s, std::vector<std::uint8_t> k) : shape(std::move(s)), keep(std::move(k)) {
    if (keep.size() != shape_numel(shape)) {
      throw Error(ErrorCode::ShapeMismatch, "mask data does not match " + shape_str(shape));
    }
  }

  bool empty() const { return keep.empty(); }
  bool operator[](std::size_t i) const { return keep[i] != 0; }
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::function<void()> backward;

  T* grad_data() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad.data();
  }
};

/// Shared handle to a dense row-major array. Copies alias the same storage;
/// use `clone()` for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<TensorNode<T>>()) {
    node_->value.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<TensorNode<T>>()) {
    if (data.size() != shape_numel(shape)) {
      throw Error(ErrorCode::ShapeMismatch,
                  std::to_string(data.size()) + " values for shape " + shape_str(shape));
    }
    node_->value = std::move(data);
    node_->shape = std::move(shape);
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  /// Leaf that accumulates gradients when used under an active tape.
  static Tensor leaf(Shape shape, std::vector<T> data) {
    Tensor t(std::move(shape), std::move(data));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }

  /// Empty until a backward pass reaches this tensor.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return {node_->grad_data(), node_->value.size()}; }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  T item() const {
    if (numel() != 1) {
      throw Error(ErrorCode::ShapeMismatch, "item() on tensor of shape " + shape_str(shape()));
    }
    return node_->value[0];
  }

  T operator[](std::size_t i) const { return node_->value[i]; }

  Tensor clone() const {
    Tensor t(node_->shape, node_->value);
    t.node_->requires_grad = node_->requires_grad;
    return t;
  }

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

/// Records differentiable ops in creation order, which is a topological
/// order of the computation graph. A tape is confined to the thread that
/// activated it.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::shared_ptr<TensorNode<T>> node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// Seeds d(loss) = 1 and runs each recorded backward closure once,
  /// newest first. Leaves keep their accumulated gradients; the tape is
  /// cleared afterwards. Returns the number of nodes visited.
  std::size_t backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
      throw Error(ErrorCode::ShapeMismatch, "backward() needs a scalar loss");
    }
    loss.node()->grad_data()[0] += T(1);
    std::size_t visited = 0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      TensorNode<T>& node = **it;
      ++visited;
      if (!node.grad.empty() && node.backward) node.backward();
    }
    for (auto& node : nodes_) node->backward = nullptr;
    nodes_.clear();
    return visited;
  }

  static Tape*& active() {
    static thread_local Tape* current = nullptr;
    return current;
  }

 private:
  std::vector<std::shared_ptr<TensorNode<T>>> nodes_;
};

/// Makes `tape` the recording tape for this thread for the scope's lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(Tape<T>::active()) { Tape<T>::active() = &tape; }
  ~TapeScope() { Tape<T>::active() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

namespace detail {

template <typename T>
bool tracking(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  for (const Tensor<T>* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

/// Marks `out` as differentiable and records it on the active tape. The
/// closure must capture `out` by raw node pointer only.
template <typename T, typename F>
void attach(Tensor<T>& out, F&& backward) {
  out.node()->requires_grad = true;
  out.node()->backward = std::forward<F>(backward);
  Tape<T>::active()->record(out.node());
}

inline void require(bool ok, ErrorCode code, const std::string& message) {
  if (!ok) throw Error(code, message);
}

}  // namespace detail

}  // namespace narsp
