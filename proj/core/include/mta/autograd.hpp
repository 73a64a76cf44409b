// Copyright 2026 The MTA Attack Authors
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
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "mta/tensor.hpp"

namespace mta {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the recorded computation graph. Leaves have no inputs and no
// backward rule. Interior nodes exist only while some Var refers to them.
struct Node {
  Tensor value;
  std::optional<Tensor> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr> inputs;
  // Reads `self.grad` and accumulates into `self.inputs[i]->grad`.
  std::function<void(Node& self)> backward;
};

// Handle to a graph node. Copies share the node, so a parameter Var copied
// into several models is the same parameter.
class Var {
 public:
  Var();
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.has_value(); }
  // Throws if no gradient has been accumulated.
  const Tensor& grad() const;
  void zero_grad() { node_->grad.reset(); }

  // Direct write access for optimizers and checkpoint loading.
  Tensor& mutable_value() { return node_->value; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  const NodePtr& node() const { return node_; }
  bool same_node(const Var& other) const { return node_ == other.node_; }

 private:
  friend Var make_op(Tensor, const char*, std::vector<Var>, std::function<void(Node&)>);
  explicit Var(NodePtr node) : node_(std::move(node)) {}
  NodePtr node_;
};

// Records an op node when any input requires grad; otherwise returns a plain
// constant. Exposed for composite ops defined outside this module.
Var make_op(Tensor value, const char* op, std::vector<Var> inputs, std::function<void(Node&)> backward);
// Adds g into n.grad when n requires grad.
void accumulate_grad(Node& n, const Tensor& g);

inline Var constant(Tensor t) { return Var(std::move(t), false); }
inline Var parameter(Tensor t) { return Var(std::move(t), true); }

// Reverse-mode sweep from a single-element loss. Every requires_grad leaf
// reachable from loss receives d loss / d leaf, added to any existing grad.
void backward(const Var& loss);

// ---- elementwise, with numpy-style broadcasting -------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);  // DomainError on an exact zero divisor

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }

Var neg(const Var& x);
Var scale(const Var& x, double c);
Var add_scalar(const Var& x, double c);
Var relu(const Var& x);
Var tanh(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);   // DomainError on x <= 0
Var sqrt(const Var& x);  // DomainError on x < 0
Var abs(const Var& x);
// max(x, lo). Gradient passes only where x > lo strictly.
Var clamp_min(const Var& x, double lo);

// ---- linear algebra -------------------------------------------------------------
Var matmul(const Var& a, const Var& b);  // (m,k) x (k,n)

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t pad = 0;
};
std::size_t conv_out_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);
// x: N x C x H x W, w: O x C x k x k, bias: O (optional). Zero padding.
Var conv2d(const Var& x, const Var& w, const std::optional<Var>& bias, Conv2dParams p);

// ---- reductions and shape ops -------------------------------------------------------
Var sum(const Var& x);
Var mean(const Var& x);
Var sum(const Var& x, std::size_t axis, bool keepdim);
Var mean(const Var& x, std::size_t axis, bool keepdim);
// Collapses every axis but the first: N x ... -> N.
Var mean_rows(const Var& x);
Var sum_rows(const Var& x);
// max |x|. per_row keeps axis 0 and reduces the rest to size-1 dims.
Var max_abs(const Var& x, bool per_row = false);
Var reshape(const Var& x, Shape shape);
Var upsample2x_nearest(const Var& x);  // N x C x H x W -> N x C x 2H x 2W
Var concat(std::span<const Var> parts, std::size_t axis);
// Softmax over one axis, computed with max subtraction.
Var softmax(const Var& x, std::size_t axis);
inline Var softmax(const Var& x) { return softmax(x, x.shape().size() - 1); }

// -sum(onehot * log(max(p, delta))) over `class_axis`, averaged over every
// remaining position of each sample. Returns one value per sample (shape N).
Var cross_entropy_per_sample(const Var& probs, const Tensor& onehot, std::size_t class_axis = 1,
                             double delta = 1e-12);
// Batch mean of cross_entropy_per_sample.
Var cross_entropy(const Var& probs, const Tensor& onehot, std::size_t class_axis = 1, double delta = 1e-12);

// One-hot along axis 1: labels of N samples (classification) -> N x C, or
// N*H*W pixel labels -> N x C x H x W when `spatial` is {H, W}.
Tensor one_hot(std::span<const int> labels, std::size_t classes, Shape spatial = {});

}  // namespace mta
