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
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mta/dataset.hpp"
#include "mta/evaluation.hpp"
#include "mta/generator.hpp"
#include "mta/losses.hpp"
#include "mta/victim.hpp"

namespace mta {

enum class AttackGoal { non_targeted, targeted };
enum class AttackMethod { mta, gap, fgsm };

std::string_view to_string(AttackGoal g);
std::string_view to_string(AttackMethod m);
AttackGoal parse_goal(std::string_view s);
AttackMethod parse_method(std::string_view s);

struct AttackConfig {
  AttackGoal goal = AttackGoal::non_targeted;
  PerturbMode mode = PerturbMode::universal;
  double eps = 0.1;
  NormKind norm = NormKind::linf;
  std::vector<double> weights;  // empty means 1/M each
  std::vector<int> targets;     // 0-based target class per task, targeted only
  std::size_t epochs = 30;
  std::size_t batch = 10;  // per task
  double lr = 2e-4;
  std::uint64_t seed = 0;
  double delta = 1e-12;
  std::size_t blocks = 2;
  std::size_t width1 = 8;
  std::size_t width2 = 16;
  std::size_t probe = 64;  // held-out rows per task for the per-epoch fooling ratio
};

// Throws ConfigError naming the violated constraint.
void validate(const AttackConfig& config, std::size_t tasks);
std::vector<double> resolved_weights(const AttackConfig& config, std::size_t tasks);
GeneratorConfig generator_config(const AttackConfig& config, std::size_t tasks, const Shape& input_shape,
                                 std::uint64_t seed);
nlohmann::json attack_config_to_json(const AttackConfig& config);
AttackConfig attack_config_from_json(const nlohmann::json& j);

// mean(-log(max(loss_i, delta))): lower when per-sample losses are larger.
Var nontargeted_fooling(const Var& per_sample_loss, double delta = 1e-12);
// mean(log(max(loss_i, delta))): lower when per-sample losses are smaller.
Var targeted_fooling(const Var& per_sample_loss, double delta = 1e-12);

Var loss_nontargeted_classification(const VictimModel& victim, const Var& x_hat, std::span<const int> labels,
                                    double delta = 1e-12);
Var loss_targeted_classification(const VictimModel& victim, const Var& x_hat, int target, double delta = 1e-12);
Var loss_nontargeted_dense(const VictimModel& victim, const Var& x_hat, const TaskBatch& batch,
                           double delta = 1e-12);
// sum_t weights[t] * losses[t]
Var multi_task_objective(std::span<const Var> losses, std::span<const double> weights);

struct TrainingLog {
  std::vector<std::string> task_ids;
  std::vector<double> total;                       // per epoch, mean objective over steps
  std::vector<std::vector<double>> task_loss;      // [epoch][task]
  std::vector<std::vector<double>> probe_fooling;  // [epoch][task]
  std::vector<double> seconds;                     // cumulative wall time

  std::size_t epochs() const { return total.size(); }
  std::string to_csv() const;
};

// Adam over encoder and decoders jointly. One step draws a batch per task,
// forms the perturbed inputs, and backpropagates the weighted objective once.
// An epoch is ceil(min_t |train_t| / batch) steps. Victims must be frozen.
TrainingLog train_mta(MultiTaskGenerator& generator, const VictimFamily& victims, const MultiTaskDataset& data,
                      const AttackConfig& config);

struct GapResult {
  std::vector<MultiTaskGenerator> generators;  // one single-task generator per task
  std::vector<TrainingLog> logs;
};

// One independent generator per task with the same architecture as the
// shared encoder plus one decoder, each trained on its own task loss.
GapResult train_gap_baseline(const MultiTaskDataset& data, const VictimFamily& victims, const AttackConfig& config);

// eps * sign(grad) elementwise, sign(0) = 0.
Tensor signed_step(Tensor grad, double eps);

// eps * sign(d task_loss / dx), sign(0) = 0. Uses the victim's supervised
// loss, which is cross-entropy for classification.
Tensor fgsm_perturb(const VictimModel& victim, const TaskBatch& batch, double eps);

// A trained attack of any method, ready for evaluation or persistence.
struct AttackArtifact {
  AttackMethod method = AttackMethod::mta;
  AttackConfig config;
  std::vector<MultiTaskGenerator> generators;  // mta: one; gap: one per task; fgsm: none
};

AttackArtifact train_attack(AttackMethod method, const MultiTaskDataset& data, const VictimFamily& victims,
                            const AttackConfig& config, std::vector<TrainingLog>* logs = nullptr);
// FGSM needs the white-box family it is crafted against.
Perturber make_perturber(const AttackArtifact& attack, const VictimFamily* source = nullptr);
AttackDescriptor describe(const AttackArtifact& attack);
std::size_t count_parameters(const AttackArtifact& attack);

NamedTensorArchive attack_to_archive(const AttackArtifact& attack);
AttackArtifact attack_from_archive(const NamedTensorArchive& archive);
void save_attack(const AttackArtifact& attack, const std::filesystem::path& path);
AttackArtifact load_attack(const std::filesystem::path& path);

}  // namespace mta
