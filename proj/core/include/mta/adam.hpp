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

#include <cstdint>
#include <vector>

#include "mta/autograd.hpp"

namespace mta {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Per-parameter moments plus the shared step counter.
struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::int64_t step = 0;
};

// Adam with bias correction (Kingma & Ba). Parameters are held by handle, so
// updates are visible through every Var sharing the node.
class Adam {
 public:
  Adam(std::vector<Var> params, AdamOptions options = {});

  // Throws std::logic_error if any parameter has no gradient.
  void step();
  void zero_grad();

  const AdamState& state() const { return state_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<Var>& params() const { return params_; }

 private:
  std::vector<Var> params_;
  AdamOptions options_;
  AdamState state_;
};

}  // namespace mta
