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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mta/dataset.hpp"
#include "mta/generator.hpp"
#include "mta/losses.hpp"
#include "mta/metrics.hpp"
#include "mta/victim.hpp"

namespace mta {

// Fraction of positions whose argmax differs between clean and perturbed
// outputs (per pixel for dense classification). Regression kinds have no
// argmax, so there it is the fraction of pixels whose error against
// `targets` grew (absolute error for depth, angle for normals).
double fooling_ratio_outputs(TaskKind kind, const Tensor& clean_out, const Tensor& adv_out,
                             const Tensor* targets = nullptr);
double fooling_ratio(const VictimModel& victim, const Tensor& clean, const Tensor& perturbed,
                     const Tensor* targets = nullptr);
double accuracy(const VictimModel& victim, const Tensor& x, std::span<const int> labels);
double top1_target_accuracy(const VictimModel& victim, const Tensor& perturbed, int target);

// Perturbation for a batch of one task: either 1 x input_shape (universal)
// or one row per sample.
using Perturber = std::function<Tensor(std::size_t task, const TaskBatch& batch)>;

struct AttackDescriptor {
  std::string method = "mta";
  std::string goal = "non_targeted";
  std::string mode = "universal";
  double eps = 0.0;
  std::string norm = "inf";
  std::string family = "independent";
  std::uint64_t seed = 0;
  std::vector<int> targets;  // targeted attacks only
};

struct EvalReport {
  AttackDescriptor attack;
  std::vector<std::string> task_ids;
  std::vector<TaskKind> kinds;
  std::vector<MetricMap> tasks;  // "clean.<m>", "adv.<m>", "fooling_ratio", "target_accuracy"
  MetricMap averages;            // keys present for every task
  MetricMap timing;              // seconds, excluded from reproducibility checks
  std::size_t parameters = 0;

  void compute_averages();
};

// Headline metric of a task kind: accuracy, pix_acc, abs_err or angle_mean.
std::string primary_metric(TaskKind kind);

// Clean and perturbed metrics of every model in `family` on the test split.
EvalReport evaluate_attack(const VictimFamily& family, const MultiTaskDataset& data, const Perturber& perturb,
                           const AttackDescriptor& attack);
// As evaluate_attack, after checking that `target` was trained on the same
// task layout as `data`. Used with perturbations crafted against another family.
EvalReport transfer_eval(const Perturber& perturb, const VictimFamily& target, const MultiTaskDataset& data,
                         AttackDescriptor attack);

std::string report_to_csv(const EvalReport& report);
EvalReport report_from_csv(const std::string& text);
// Method rows by task columns plus Avg; each cell is "fool% (metric)".
std::string reports_to_markdown(std::span<const EvalReport> reports);

std::size_t count_parameters(const MultiTaskGenerator& generator);
std::size_t count_parameters(std::span<const MultiTaskGenerator> generators);
std::size_t count_parameters(const VictimFamily& family);

// Median wall time of fn() over `repetitions` runs after `warmup` untimed runs.
// Throws ConfigError when repetitions < 30.
double median_seconds(const std::function<void()>& fn, std::size_t repetitions, std::size_t warmup = 3);
// All M perturbations of input x: one encoder pass plus M decoders.
double measure_inference_time(const MultiTaskGenerator& generator, const Tensor& x, std::size_t repetitions);
// All M perturbations of input x from M single-task generators (M full passes).
double measure_inference_time(std::span<const MultiTaskGenerator> generators, const Tensor& x,
                              std::size_t repetitions);

}  // namespace mta
