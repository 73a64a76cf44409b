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

#include "mta/losses.hpp"

#include "mta/errors.hpp"

namespace mta {

TaskBatch make_batch(const TaskData& task, std::span<const std::size_t> rows) {
  TaskBatch b;
  b.inputs = batch_inputs(task, rows);
  if (is_classification(task.spec.kind)) {
    b.labels = batch_labels(task, rows);
  } else {
    b.targets = batch_targets(task, rows);
  }
  return b;
}

Var normalize_channels(const Var& x, double eps) {
  Var norm = sqrt(add_scalar(sum(mul(x, x), 1, true), eps));
  return div(x, norm);
}

Var task_loss_per_sample(const TaskSpec& spec, const Var& output, const TaskBatch& batch, double delta) {
  const Shape& s = output.shape();
  if (s.empty() || s[0] != batch.size()) {
    throw ShapeError("task_loss: output " + shape_str(s) + " does not match batch of " + std::to_string(batch.size()));
  }
  switch (spec.kind) {
    case TaskKind::classification:
      return cross_entropy_per_sample(output, one_hot(batch.labels, spec.num_classes), 1, delta);
    case TaskKind::dense_classification: {
      if (s.size() != 4) throw ShapeError("task_loss: dense classification expects N x C x H x W, got " + shape_str(s));
      return cross_entropy_per_sample(output, one_hot(batch.labels, spec.num_classes, {s[2], s[3]}), 1, delta);
    }
    case TaskKind::dense_regression:
      if (s != batch.targets.shape()) {
        throw ShapeError("task_loss: depth " + shape_str(s) + " vs target " + shape_str(batch.targets.shape()));
      }
      return mean_rows(abs(sub(output, constant(batch.targets))));
    case TaskKind::dense_unit_vector: {
      if (s != batch.targets.shape()) {
        throw ShapeError("task_loss: normals " + shape_str(s) + " vs target " + shape_str(batch.targets.shape()));
      }
      Var dot = sum(mul(output, constant(batch.targets)), 1, true);
      return add_scalar(neg(mean_rows(dot)), 1.0);
    }
  }
  throw ShapeError("task_loss: unknown task kind");
}

}  // namespace mta
