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
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "mta/archive.hpp"
#include "mta/autograd.hpp"
#include "mta/dataset.hpp"
#include "mta/metrics.hpp"
#include "mta/nn.hpp"

namespace mta {

struct VictimArchConfig {
  std::size_t width = 8;         // classification: conv widths w, 2w
  std::size_t dense_width = 16;  // dense encoder-decoder: widths w, 2w, w
};

// A pre-trained predictor K_t. Attacks only ever read it: once frozen, its
// parameters stop requiring gradients, so gradients flow through to the
// input but never into the weights.
class VictimModel {
 public:
  TaskSpec task;
  std::vector<Layer> layers;
  bool frozen = false;
  MetricMap clean_metrics;

  // Logits or raw dense maps.
  Var forward_raw(const Var& x) const;
  // k(x): softmax probabilities, depth, or per-pixel unit normals.
  Var forward(const Var& x) const;
  // forward() on a plain tensor, evaluated in chunks (parallel under MTA_THREADS).
  Tensor predict(const Tensor& x) const;

  std::vector<Var> parameters() const;
  std::size_t num_params() const;
  std::uint64_t checksum() const;
  void freeze();
};

std::vector<LayerSpec> victim_layers(const TaskSpec& task, const VictimArchConfig& arch);
VictimModel build_victim(const TaskSpec& task, const VictimArchConfig& arch, std::uint64_t seed);

struct VictimTrainOptions {
  std::size_t epochs = 40;
  double lr = 3e-3;
  std::size_t batch = 32;
  std::uint64_t seed = 0;
};

// Clean metrics of a model on the given rows: accuracy for classification,
// dense_metrics for dense kinds.
MetricMap evaluate_clean(const VictimModel& model, const TaskData& task, std::span<const std::size_t> rows);

// Minibatch Adam on the train split; returns clean test metrics and freezes
// the model. Throws DivergenceError on a non-finite loss.
MetricMap train_victim(VictimModel& model, const TaskData& task, const VictimTrainOptions& options);

enum class FamilyKind { independent, shared_encoder };

struct VictimFamily {
  FamilyKind kind = FamilyKind::independent;
  std::vector<VictimModel> models;
  std::size_t shared_layers = 0;  // leading layers whose Vars are shared by every model

  std::vector<Var> parameters() const;  // deduplicated
  std::size_t num_params() const;
  std::uint64_t checksum() const;
};

VictimFamily train_independent_family(const MultiTaskDataset& data, const VictimArchConfig& arch,
                                      const VictimTrainOptions& options);
// One encoder plus per-task heads trained jointly on the uniformly weighted
// sum of task losses. Requires a shared-input suite.
VictimFamily train_shared_encoder_family(const MultiTaskDataset& data, const VictimArchConfig& arch,
                                         const VictimTrainOptions& options);

NamedTensorArchive family_to_archive(const VictimFamily& family);
VictimFamily family_from_archive(const NamedTensorArchive& archive);
void save_family(const VictimFamily& family, const std::filesystem::path& path);
VictimFamily load_family(const std::filesystem::path& path);
void save_victim(const VictimModel& model, const std::filesystem::path& path);
VictimModel load_victim(const std::filesystem::path& path);

}  // namespace mta
