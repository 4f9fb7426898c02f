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

#include "qe/nn/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include "qe/error.hpp"

namespace qe::nn {
namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
         std::to_string(h) + "," + std::to_string(w) + ")";
}

std::vector<double>& Tensor::Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor::Tensor(Shape shape, double fill)
    : node_(std::make_shared<Node>()) {
  node_->shape = shape;
  node_->value.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : node_(std::make_shared<Node>()) {
  if (values.size() != shape.numel()) {
    throw ShapeError("tensor of shape " + shape.str() + " given " +
                     std::to_string(values.size()) + " values");
  }
  node_->shape = shape;
  node_->value = std::move(values);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

std::span<double> Tensor::mutable_values() {
  if (node_->backward) throw Error("cannot mutate the values of an op result");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape().str());
  }
  return node_->value[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  if (node_->backward) throw Error("requires_grad can only be set on leaves");
  node_->requires_grad = on;
  return *this;
}

void Tensor::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() needs a scalar, got " + shape().str());
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (Node* n : order) {
    if (n->backward) {
      n->backward = nullptr;
      n->inputs.clear();
      if (n != node_.get()) std::vector<double>().swap(n->grad);
    }
  }
}

Tensor Tensor::detach() const {
  return Tensor(node_->shape, node_->value);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs,
                   std::function<void(Tensor::Node&)> backward) {
  auto node = std::make_shared<Tensor::Node>();
  node->shape = shape;
  node->value = std::move(value);
  if (g_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
      return t.defined() && t.requires_grad();
    });
    if (any) {
      node->requires_grad = true;
      node->backward = std::move(backward);
      for (auto& t : inputs) {
        if (t.defined()) node->inputs.push_back(t.node());
      }
    }
  }
  return Tensor(std::move(node));
}

}  // namespace qe::nn
