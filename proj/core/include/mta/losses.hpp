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

#include <span>
#include <vector>

#include "mta/autograd.hpp"
#include "mta/dataset.hpp"

namespace mta {

// Inputs plus the supervision matching the task kind.
struct TaskBatch {
  Tensor inputs;
  std::vector<int> labels;  // classification kinds
  Tensor targets;           // regression kinds

  std::size_t size() const { return inputs.dim(0); }
};

TaskBatch make_batch(const TaskData& task, std::span<const std::size_t> rows);

// Per-pixel L2 normalisation over the channel axis (axis 1).
Var normalize_channels(const Var& x, double eps = 1e-12);

// Supervised task loss per sample (shape N), evaluated on a model output
// (probabilities for classification kinds, depth map, or unit normals):
//   classification kinds: cross-entropy, averaged over pixels for dense maps
//   dense_regression:     mean absolute error
//   dense_unit_vector:    1 - mean(n_hat . n), in [0, 2]
Var task_loss_per_sample(const TaskSpec& spec, const Var& output, const TaskBatch& batch, double delta = 1e-12);

}  // namespace mta
