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

#include "mta/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mta {

Adam::Adam(std::vector<Var> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  for (const Var& p : params_) {
    state_.first_moment.emplace_back(p.shape(), 0.0);
    state_.second_moment.emplace_back(p.shape(), 0.0);
  }
}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) throw std::logic_error("adam: parameter " + std::to_string(i) + " has no gradient");
  }
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double c1 = 1.0 - std::pow(options_.beta1, t);
  const double c2 = 1.0 - std::pow(options_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& w = params_[i].mutable_value();
    const Tensor& g = params_[i].grad();
    Tensor& m = state_.first_moment[i];
    Tensor& v = state_.second_moment[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * g[j];
      v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= options_.lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Var& p : params_) p.zero_grad();
}

}  // namespace mta
