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

#include <functional>

#include "mta/tensor.hpp"

namespace mta {

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
// Test oracle for the reverse-mode engine; it never touches the graph.
Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-4);

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-8);

}  // namespace mta
