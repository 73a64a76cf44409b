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
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mta/archive.hpp"
#include "mta/tensor.hpp"

namespace mta {

enum class TaskKind { classification, dense_classification, dense_regression, dense_unit_vector };
enum class SuiteKind { shared_label, shared_input };

std::string_view to_string(TaskKind kind);
std::string_view to_string(SuiteKind kind);
TaskKind parse_task_kind(std::string_view s);
SuiteKind parse_suite_kind(std::string_view s);
bool is_classification(TaskKind kind);  // classification or dense_classification
bool is_dense(TaskKind kind);

struct TaskSpec {
  std::size_t id = 0;
  TaskKind kind = TaskKind::classification;
  std::size_t num_classes = 0;  // classification kinds only
  Shape input_shape;            // C x H x W
  nlohmann::json sampling = nlohmann::json::object();

  // Channels of the victim's raw output: classes, 1 (depth) or 3 (normal).
  std::size_t output_channels() const;
};

nlohmann::json task_spec_to_json(const TaskSpec& spec);
TaskSpec task_spec_from_json(const nlohmann::json& j);

// Samples of one task. Labels are 0-based class indices; for dense
// classification there are H*W labels per sample, row-major.
struct TaskData {
  TaskSpec spec;
  std::shared_ptr<const Tensor> inputs;  // n x C x H x W, shared across tasks on shared-input suites
  std::vector<int> labels;
  Tensor targets;  // dense regression: n x 1 x H x W; unit vectors: n x 3 x H x W
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;

  std::size_t size() const { return inputs->dim(0); }
};

struct MultiTaskDataset {
  SuiteKind suite = SuiteKind::shared_label;
  std::uint64_t seed = 0;
  double test_fraction = 0.0;  // 0 until split_train_test runs
  std::vector<TaskData> tasks;
};

struct SharedLabelOptions {
  std::size_t tasks = 3;
  std::size_t classes = 20;
  std::size_t n_per_task = 500;
  Shape input_shape{1, 16, 16};
  double amplitude = 0.3;  // L2 distance of every class centre from mid-grey
  double noise = 0.03;     // per-pixel Gaussian noise
  double domain_shift = 1.0;  // how far each task's centre mixing departs from the identity
};

struct SharedInputOptions {
  std::size_t n = 200;
  std::size_t resolution = 16;
  double noise = 0.02;
};

// Class-conditional Gaussian clusters. All tasks use the same C labels; each
// task places its class centres with its own orthogonal mixing of a shared
// smooth basis, so the tasks are related but have different input laws.
MultiTaskDataset make_shared_label_suite(std::uint64_t seed, const SharedLabelOptions& options);

// Procedural scenes (wall, floor, sphere, box) rendered once and labelled for
// 4-class segmentation, depth and surface normals. All three tasks point at
// the same input tensor.
MultiTaskDataset make_shared_input_suite(std::uint64_t seed, const SharedInputOptions& options);

// Deterministic split. Classification tasks are stratified per class; dense
// tasks of a shared-input suite all receive the same split.
MultiTaskDataset split_train_test(MultiTaskDataset dataset, double test_fraction);

NamedTensorArchive dataset_to_archive(const MultiTaskDataset& dataset);
MultiTaskDataset dataset_from_archive(const NamedTensorArchive& archive);
void save_dataset(const MultiTaskDataset& dataset, const std::filesystem::path& path);
MultiTaskDataset load_dataset(const std::filesystem::path& path);

// ---- batch assembly ------------------------------------------------------------
Tensor batch_inputs(const TaskData& task, std::span<const std::size_t> rows);
std::vector<int> batch_labels(const TaskData& task, std::span<const std::size_t> rows);
Tensor batch_targets(const TaskData& task, std::span<const std::size_t> rows);

}  // namespace mta
