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

#include "mta/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>

#include "gemm.hpp"
#include "mta/errors.hpp"

namespace mta {

// ---- graph plumbing -------------------------------------------------------------------

Var::Var() : node_(std::make_shared<Node>()) {}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Tensor& Var::grad() const {
  if (!node_->grad) throw std::logic_error("grad: no gradient accumulated for this variable");
  return *node_->grad;
}

Var make_op(Tensor value, const char* op, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  const bool track = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
  if (track) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

void accumulate_grad(Node& n, const Tensor& g) {
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape()) {
    throw ShapeError(std::string("backward: gradient ") + shape_str(g.shape()) + " does not match " +
                     shape_str(n.value.shape()) + " for op " + n.op);
  }
  if (!n.grad) {
    n.grad = g;
    return;
  }
  auto dst = n.grad->data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void backward(const Var& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order of the recorded graph.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward) n->grad.reset();
  }
  Node& root = *loss.node();
  if (root.backward) {
    root.grad = Tensor(root.value.shape(), 1.0);
  } else {
    accumulate_grad(root, Tensor(root.value.shape(), 1.0));
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad) n->backward(*n);
  }
  // Interior gradients are no longer needed; leaves keep theirs.
  for (Node* n : order) {
    if (n->backward) n->grad.reset();
  }
}

namespace {

const Tensor& in_value(const Node& n, std::size_t i) { return n.inputs[i]->value; }
Node& in_node(Node& n, std::size_t i) { return *n.inputs[i]; }
bool wants(const Node& n, std::size_t i) { return n.inputs[i]->requires_grad; }

// ---- broadcasting -----------------------------------------------------------------------

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;  // per output axis, 0 on broadcast axes
};

std::vector<std::size_t> aligned_strides(const Shape& s, std::size_t rank, const Shape& out) {
  std::vector<std::size_t> strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::size_t axis = rank - 1 - i;
    const std::size_t d = s[s.size() - 1 - i];
    strides[axis] = (d == 1 && out[axis] != 1) ? 0 : stride;
    stride *= d;
  }
  return strides;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Broadcast p;
  p.out.assign(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    p.out[rank - 1 - i] = std::max(da, db);
  }
  p.stride_a = aligned_strides(a, rank, p.out);
  p.stride_b = aligned_strides(b, rank, p.out);
  return p;
}

template <class F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  const std::size_t n = numel(p.out);
  const std::size_t rank = p.out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      ia += p.stride_a[ax];
      ib += p.stride_b[ax];
      if (idx[ax] < p.out[ax]) break;
      ia -= p.stride_a[ax] * idx[ax];
      ib -= p.stride_b[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

enum class Side { a, b };

// Sums an output-shaped gradient down to one operand's shape.
Tensor reduce_to(const Broadcast& p, const Tensor& g, const Shape& target, Side side) {
  if (g.shape() == target) return g;
  Tensor out(target, 0.0);
  for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    out[side == Side::a ? ia : ib] += g[i];
  });
  return out;
}

template <class Fwd, class DA, class DB>
Var binary(const Var& a, const Var& b, const char* op, Fwd fwd, DA da, DB db) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() == bv.shape()) {
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
    return make_op(std::move(out), op, {a, b}, [da, db](Node& self) {
      const Tensor& g = *self.grad;
      const Tensor& x = in_value(self, 0);
      const Tensor& y = in_value(self, 1);
      if (wants(self, 0)) {
        Tensor ga(x.shape());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[i] * da(x[i], y[i]);
        accumulate_grad(in_node(self, 0), ga);
      }
      if (wants(self, 1)) {
        Tensor gb(y.shape());
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = g[i] * db(x[i], y[i]);
        accumulate_grad(in_node(self, 1), gb);
      }
    });
  }
  Broadcast p = plan_broadcast(av.shape(), bv.shape(), op);
  Tensor out(p.out);
  for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = fwd(av[ia], bv[ib]); });
  return make_op(std::move(out), op, {a, b}, [p, da, db](Node& self) {
    const Tensor& g = *self.grad;
    const Tensor& x = in_value(self, 0);
    const Tensor& y = in_value(self, 1);
    if (wants(self, 0)) {
      Tensor ga(p.out);
      for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { ga[i] = g[i] * da(x[ia], y[ib]); });
      accumulate_grad(in_node(self, 0), reduce_to(p, ga, x.shape(), Side::a));
    }
    if (wants(self, 1)) {
      Tensor gb(p.out);
      for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { gb[i] = g[i] * db(x[ia], y[ib]); });
      accumulate_grad(in_node(self, 1), reduce_to(p, gb, y.shape(), Side::b));
    }
  });
}

template <class Fwd, class Deriv>
Var unary(const Var& x, const char* op, Fwd fwd, Deriv deriv) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_op(std::move(out), op, {x}, [deriv](Node& self) {
    const Tensor& g = *self.grad;
    const Tensor& in = in_value(self, 0);
    const Tensor& y = self.value;
    Tensor gx(in.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] * deriv(in[i], y[i]);
    accumulate_grad(in_node(self, 0), gx);
  });
}

void require_rank(const Var& x, std::size_t rank, const char* op) {
  if (x.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
  }
}

}  // namespace

// ---- elementwise ----------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(const Var& a, const Var& b) {
  for (double d : b.value().data()) {
    if (d == 0.0) throw DomainError("div: exact zero divisor");
  }
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var neg(const Var& x) {
  return unary(x, "neg", [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Var scale(const Var& x, double c) {
  return unary(x, "scale", [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Var add_scalar(const Var& x, double c) {
  return unary(x, "add_scalar", [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var relu(const Var& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& x) {
  return unary(x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(const Var& x) {
  for (double v : x.value().data()) {
    if (v <= 0.0) throw DomainError("log: argument " + std::to_string(v) + " is not positive");
  }
  return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var sqrt(const Var& x) {
  for (double v : x.value().data()) {
    if (v < 0.0) throw DomainError("sqrt: negative argument " + std::to_string(v));
  }
  return unary(x, "sqrt", [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Var abs(const Var& x) {
  return unary(
      x, "abs", [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var clamp_min(const Var& x, double lo) {
  return unary(
      x, "clamp_min", [lo](double v) { return v > lo || std::isnan(v) ? v : lo; },
      [lo](double v, double) { return v > lo ? 1.0 : 0.0; });
}

// ---- linear algebra -------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out({m, n}, 0.0);
  detail::gemm_nn(m, n, k, a.value().values().data(), b.value().values().data(), out.data().data());
  return make_op(std::move(out), "matmul", {a, b}, [m, n, k](Node& self) {
    const double* g = self.grad->values().data();
    if (wants(self, 0)) {
      Tensor ga({m, k}, 0.0);
      detail::gemm_nt(m, k, n, g, in_value(self, 1).values().data(), ga.data().data());
      accumulate_grad(in_node(self, 0), ga);
    }
    if (wants(self, 1)) {
      Tensor gb({k, n}, 0.0);
      detail::gemm_tn(k, n, m, in_value(self, 0).values().data(), g, gb.data().data());
      accumulate_grad(in_node(self, 1), gb);
    }
  });
}

std::size_t conv_out_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  if (in + 2 * pad < kernel) {
    throw ShapeError("conv2d: kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

Var conv2d(const Var& x, const Var& w, const std::optional<Var>& bias, Conv2dParams p) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const std::size_t n = xs[0], c = xs[1], h = xs[2], wd = xs[3];
  const std::size_t o = ws[0], k = ws[2];
  if (ws[1] != c || ws[3] != k) {
    throw ShapeError("conv2d: kernel " + shape_str(ws) + " incompatible with input " + shape_str(xs));
  }
  if (bias && bias->shape() != Shape{o}) {
    throw ShapeError("conv2d: bias " + shape_str(bias->shape()) + " for " + std::to_string(o) + " output channels");
  }
  const std::size_t ho = conv_out_size(h, k, p.stride, p.pad);
  const std::size_t wo = conv_out_size(wd, k, p.stride, p.pad);
  const std::size_t rows = c * k * k, cols = ho * wo;

  auto col_buf = std::make_shared<std::vector<double>>(n * rows * cols, 0.0);
  const double* xin = x.value().values().data();
  for (std::size_t s = 0; s < n; ++s) {
    double* col = col_buf->data() + s * rows * cols;
    const double* xs_ = xin + s * c * h * wd;
    for (std::size_t ci = 0; ci < c; ++ci) {
      for (std::size_t ki = 0; ki < k; ++ki) {
        for (std::size_t kj = 0; kj < k; ++kj) {
          double* row = col + ((ci * k + ki) * k + kj) * cols;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * p.stride + ki) - static_cast<std::ptrdiff_t>(p.pad);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const std::ptrdiff_t iw =
                  static_cast<std::ptrdiff_t>(ow * p.stride + kj) - static_cast<std::ptrdiff_t>(p.pad);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(wd)) continue;
              row[oh * wo + ow] = xs_[(ci * h + static_cast<std::size_t>(ih)) * wd + static_cast<std::size_t>(iw)];
            }
          }
        }
      }
    }
  }

  Tensor out({n, o, ho, wo}, 0.0);
  const double* wv = w.value().values().data();
  for (std::size_t s = 0; s < n; ++s) {
    double* dst = out.data().data() + s * o * cols;
    if (bias) {
      for (std::size_t oc = 0; oc < o; ++oc) std::fill_n(dst + oc * cols, cols, bias->value()[oc]);
    }
    detail::gemm_nn(o, cols, rows, wv, col_buf->data() + s * rows * cols, dst);
  }

  std::vector<Var> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return make_op(std::move(out), "conv2d", std::move(inputs), [=](Node& self) {
    const double* g = self.grad->values().data();
    if (wants(self, 1)) {
      Tensor gw(in_value(self, 1).shape(), 0.0);
      for (std::size_t s = 0; s < n; ++s) {
        detail::gemm_nt(o, rows, cols, g + s * o * cols, col_buf->data() + s * rows * cols, gw.data().data());
      }
      accumulate_grad(in_node(self, 1), gw);
    }
    if (has_bias && wants(self, 2)) {
      Tensor gb(Shape{o}, 0.0);
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t oc = 0; oc < o; ++oc) {
          const double* gr = g + (s * o + oc) * cols;
          double acc = 0.0;
          for (std::size_t j = 0; j < cols; ++j) acc += gr[j];
          gb[oc] += acc;
        }
      }
      accumulate_grad(in_node(self, 2), gb);
    }
    if (wants(self, 0)) {
      Tensor gx(in_value(self, 0).shape(), 0.0);
      std::vector<double> dcol(rows * cols);
      const double* wv2 = in_value(self, 1).values().data();
      for (std::size_t s = 0; s < n; ++s) {
        std::fill(dcol.begin(), dcol.end(), 0.0);
        detail::gemm_tn(rows, cols, o, wv2, g + s * o * cols, dcol.data());
        double* gxs = gx.data().data() + s * c * h * wd;
        for (std::size_t ci = 0; ci < c; ++ci) {
          for (std::size_t ki = 0; ki < k; ++ki) {
            for (std::size_t kj = 0; kj < k; ++kj) {
              const double* row = dcol.data() + ((ci * k + ki) * k + kj) * cols;
              for (std::size_t oh = 0; oh < ho; ++oh) {
                const std::ptrdiff_t ih =
                    static_cast<std::ptrdiff_t>(oh * p.stride + ki) - static_cast<std::ptrdiff_t>(p.pad);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t ow = 0; ow < wo; ++ow) {
                  const std::ptrdiff_t iw =
                      static_cast<std::ptrdiff_t>(ow * p.stride + kj) - static_cast<std::ptrdiff_t>(p.pad);
                  if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(wd)) continue;
                  gxs[(ci * h + static_cast<std::size_t>(ih)) * wd + static_cast<std::size_t>(iw)] += row[oh * wo + ow];
                }
              }
            }
          }
        }
      }
      accumulate_grad(in_node(self, 0), gx);
    }
  });
}

// ---- reductions and shape ops ---------------------------------------------------------------

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_op(Tensor::scalar(s), "sum", {x}, [](Node& self) {
    accumulate_grad(in_node(self, 0), Tensor(in_value(self, 0).shape(), self.grad->item()));
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

namespace {

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

}  // namespace

Var sum(const Var& x, std::size_t axis, bool keepdim) {
  const AxisSplit a = split_axis(x.shape(), axis, "sum");
  Shape os = x.shape();
  if (keepdim) {
    os[axis] = 1;
  } else {
    os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  Tensor out(os, 0.0);
  const Tensor& xv = x.value();
  for (std::size_t o = 0; o < a.outer; ++o) {
    for (std::size_t l = 0; l < a.len; ++l) {
      for (std::size_t i = 0; i < a.inner; ++i) out[o * a.inner + i] += xv[(o * a.len + l) * a.inner + i];
    }
  }
  return make_op(std::move(out), "sum_axis", {x}, [a](Node& self) {
    const Tensor& g = *self.grad;
    Tensor gx(in_value(self, 0).shape());
    for (std::size_t o = 0; o < a.outer; ++o) {
      for (std::size_t l = 0; l < a.len; ++l) {
        for (std::size_t i = 0; i < a.inner; ++i) gx[(o * a.len + l) * a.inner + i] = g[o * a.inner + i];
      }
    }
    accumulate_grad(in_node(self, 0), gx);
  });
}

Var mean(const Var& x, std::size_t axis, bool keepdim) {
  if (axis >= x.shape().size()) throw ShapeError("mean: axis out of range for " + shape_str(x.shape()));
  return scale(sum(x, axis, keepdim), 1.0 / static_cast<double>(x.shape()[axis]));
}

Var sum_rows(const Var& x) {
  if (x.shape().empty()) throw ShapeError("sum_rows: rank-0 input");
  const std::size_t n = x.shape()[0];
  return sum(reshape(x, {n, x.size() / n}), 1, false);
}

Var mean_rows(const Var& x) {
  if (x.shape().empty()) throw ShapeError("mean_rows: rank-0 input");
  const std::size_t n = x.shape()[0];
  return mean(reshape(x, {n, x.size() / n}), 1, false);
}

Var max_abs(const Var& x, bool per_row) {
  const Tensor& xv = x.value();
  const std::size_t rows = per_row ? (xv.rank() ? xv.dim(0) : 1) : 1;
  const std::size_t len = xv.size() / rows;
  Shape os;
  if (per_row) {
    os.assign(xv.rank(), 1);
    if (!os.empty()) os[0] = rows;
  }
  Tensor out(os, 0.0);
  std::vector<std::size_t> arg(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    double best = -1.0;
    for (std::size_t j = 0; j < len; ++j) {
      const double v = std::abs(xv[r * len + j]);
      if (v > best) {
        best = v;
        arg[r] = r * len + j;
      }
    }
    out[r] = best;
  }
  return make_op(std::move(out), "max_abs", {x}, [arg](Node& self) {
    const Tensor& in = in_value(self, 0);
    Tensor gx(in.shape(), 0.0);
    for (std::size_t r = 0; r < arg.size(); ++r) {
      const double v = in[arg[r]];
      const double sgn = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
      gx[arg[r]] = (*self.grad)[r] * sgn;
    }
    accumulate_grad(in_node(self, 0), gx);
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_op(std::move(out), "reshape", {x}, [](Node& self) {
    accumulate_grad(in_node(self, 0), self.grad->reshaped(in_value(self, 0).shape()));
  });
}

Var upsample2x_nearest(const Var& x) {
  require_rank(x, 4, "upsample2x_nearest");
  const Shape& s = x.shape();
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  Tensor out({s[0], s[1], 2 * h, 2 * w});
  const Tensor& xv = x.value();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    for (std::size_t i = 0; i < 2 * h; ++i) {
      for (std::size_t j = 0; j < 2 * w; ++j) {
        out[(pl * 2 * h + i) * 2 * w + j] = xv[(pl * h + i / 2) * w + j / 2];
      }
    }
  }
  return make_op(std::move(out), "upsample2x_nearest", {x}, [planes, h, w](Node& self) {
    const Tensor& g = *self.grad;
    Tensor gx(in_value(self, 0).shape(), 0.0);
    for (std::size_t pl = 0; pl < planes; ++pl) {
      for (std::size_t i = 0; i < 2 * h; ++i) {
        for (std::size_t j = 0; j < 2 * w; ++j) gx[(pl * h + i / 2) * w + j / 2] += g[(pl * 2 * h + i) * 2 * w + j];
      }
    }
    accumulate_grad(in_node(self, 0), gx);
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range for " + shape_str(s0));
  std::vector<std::size_t> lens;
  Shape os = s0;
  os[axis] = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == s0[i];
    if (!ok) throw ShapeError("concat: " + shape_str(s) + " incompatible with " + shape_str(s0));
    lens.push_back(s[axis]);
    os[axis] += s[axis];
  }
  const AxisSplit a = split_axis(os, axis, "concat");
  Tensor out(os);
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor& v = parts[pi].value();
    for (std::size_t o = 0; o < a.outer; ++o) {
      std::copy_n(v.values().begin() + static_cast<std::ptrdiff_t>(o * lens[pi] * a.inner), lens[pi] * a.inner,
                  out.data().begin() + static_cast<std::ptrdiff_t>((o * a.len + offset) * a.inner));
    }
    offset += lens[pi];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return make_op(std::move(out), "concat", std::move(inputs), [a, lens](Node& self) {
    const Tensor& g = *self.grad;
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < lens.size(); ++pi) {
      if (wants(self, pi)) {
        Tensor gp(in_value(self, pi).shape());
        for (std::size_t o = 0; o < a.outer; ++o) {
          std::copy_n(g.values().begin() + static_cast<std::ptrdiff_t>((o * a.len + offset) * a.inner),
                      lens[pi] * a.inner, gp.data().begin() + static_cast<std::ptrdiff_t>(o * lens[pi] * a.inner));
        }
        accumulate_grad(in_node(self, pi), gp);
      }
      offset += lens[pi];
    }
  });
}

Var softmax(const Var& x, std::size_t axis) {
  const AxisSplit a = split_axis(x.shape(), axis, "softmax");
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < a.outer; ++o) {
    for (std::size_t i = 0; i < a.inner; ++i) {
      const std::size_t base = o * a.len * a.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < a.len; ++l) mx = std::max(mx, xv[base + l * a.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < a.len; ++l) {
        const double e = std::exp(xv[base + l * a.inner] - mx);
        out[base + l * a.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < a.len; ++l) out[base + l * a.inner] /= z;
    }
  }
  return make_op(std::move(out), "softmax", {x}, [a](Node& self) {
    const Tensor& g = *self.grad;
    const Tensor& y = self.value;
    Tensor gx(y.shape());
    for (std::size_t o = 0; o < a.outer; ++o) {
      for (std::size_t i = 0; i < a.inner; ++i) {
        const std::size_t base = o * a.len * a.inner + i;
        double dot = 0.0;
        for (std::size_t l = 0; l < a.len; ++l) dot += g[base + l * a.inner] * y[base + l * a.inner];
        for (std::size_t l = 0; l < a.len; ++l) {
          const std::size_t j = base + l * a.inner;
          gx[j] = y[j] * (g[j] - dot);
        }
      }
    }
    accumulate_grad(in_node(self, 0), gx);
  });
}

Var cross_entropy_per_sample(const Var& probs, const Tensor& onehot, std::size_t class_axis, double delta) {
  if (probs.shape() != onehot.shape()) {
    throw ShapeError("cross_entropy: probabilities " + shape_str(probs.shape()) + " vs one-hot " +
                     shape_str(onehot.shape()));
  }
  if (probs.shape().size() < 2) throw ShapeError("cross_entropy: expected a batch axis and a class axis");
  Var picked = mul(log(clamp_min(probs, delta)), constant(onehot));
  Var per_position = neg(sum(picked, class_axis, true));
  return mean_rows(per_position);
}

Var cross_entropy(const Var& probs, const Tensor& onehot, std::size_t class_axis, double delta) {
  return mean(cross_entropy_per_sample(probs, onehot, class_axis, delta));
}

Tensor one_hot(std::span<const int> labels, std::size_t classes, Shape spatial) {
  const std::size_t per = numel(spatial);
  if (labels.empty() || labels.size() % per != 0) {
    throw ShapeError("one_hot: " + std::to_string(labels.size()) + " labels do not tile spatial " + shape_str(spatial));
  }
  const std::size_t n = labels.size() / per;
  Shape s{n, classes};
  s.insert(s.end(), spatial.begin(), spatial.end());
  Tensor out(s, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < per; ++j) {
      const int y = labels[i * per + j];
      if (y < 0 || static_cast<std::size_t>(y) >= classes) {
        throw ShapeError("one_hot: label " + std::to_string(y) + " outside [0," + std::to_string(classes) + ")");
      }
      out[(i * classes + static_cast<std::size_t>(y)) * per + j] = 1.0;
    }
  }
  return out;
}

}  // namespace mta
