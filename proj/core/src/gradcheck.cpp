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

#include "mta/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mta/errors.hpp"

namespace mta {

Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor grad(x.shape(), 0.0);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double max_relative_error(const Tensor& a, const Tensor& b, double floor) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_relative_error: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace mta
