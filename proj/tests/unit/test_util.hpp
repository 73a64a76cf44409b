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

#include <algorithm>
#include <functional>
#include <vector>

#include "mta/autograd.hpp"
#include "mta/gradcheck.hpp"
#include "mta/rng.hpp"

namespace mta::testing {

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Same shape and bit-identical values.
inline bool same_tensor(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::ranges::equal(a.data(), b.data());
}

using GraphFn = std::function<Var(const std::vector<Var>&)>;

// Worst relative error between backprop and central differences over every
// input of `fn`, which must build a scalar from its arguments.
inline double gradient_error(const GraphFn& fn, const std::vector<Tensor>& inputs, double h = 1e-4) {
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(parameter(t));
  backward(fn(vars));
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto scalar_fn = [&](const Tensor& probe) {
      std::vector<Var> consts;
      for (std::size_t j = 0; j < inputs.size(); ++j) consts.push_back(constant(j == i ? probe : inputs[j]));
      return fn(consts).value().item();
    };
    const Tensor numeric = finite_diff_gradient(scalar_fn, inputs[i], h);
    const Tensor analytic = vars[i].has_grad() ? vars[i].grad() : Tensor(inputs[i].shape(), 0.0);
    worst = std::max(worst, max_relative_error(analytic, numeric));
  }
  return worst;
}

}  // namespace mta::testing
