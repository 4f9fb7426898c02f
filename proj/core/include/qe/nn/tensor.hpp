// Copyright 2026 The DebiasQE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace qe::nn {

/// NCHW extent. Vectors are (N, C, 1, 1) and scalars (1, 1, 1, 1).
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense double-precision tensor with reverse-mode automatic differentiation.
///
/// A Tensor is a cheap handle to a shared node. Leaves (parameters, inputs)
/// own mutable values; op results are immutable and remember how to push
/// their gradient into their inputs. `backward()` consumes the graph: after
/// it returns only leaf gradients survive.
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    std::vector<double>& ensure_grad();
  };

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  /// Only valid on leaves; intended for initializers and optimizers.
  std::span<double> mutable_values();
  double item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  /// Marks a leaf as trainable (or not). Throws on op results.
  Tensor& set_requires_grad(bool on = true);

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  /// Accumulates d(this)/d(leaf) into every reachable leaf that requires a
  /// gradient. `this` must hold exactly one element.
  void backward() const;

  /// Leaf copy of the values, cut from the graph.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an op result. The backward closure is only kept when recording is
/// enabled and at least one input requires a gradient.
Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs,
                   std::function<void(Tensor::Node&)> backward);

}  // namespace qe::nn
