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

#include "mta/attack.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>

#include "mta/adam.hpp"
#include "mta/errors.hpp"
#include "mta/rng.hpp"

namespace mta {

std::string_view to_string(AttackGoal g) { return g == AttackGoal::targeted ? "targeted" : "non_targeted"; }

std::string_view to_string(AttackMethod m) {
  switch (m) {
    case AttackMethod::mta: return "mta";
    case AttackMethod::gap: return "gap";
    case AttackMethod::fgsm: return "fgsm";
  }
  return "?";
}

AttackGoal parse_goal(std::string_view s) {
  if (s == "targeted") return AttackGoal::targeted;
  if (s == "non_targeted") return AttackGoal::non_targeted;
  throw ConfigError("unknown goal '" + std::string(s) + "' (expected targeted or non_targeted)");
}

AttackMethod parse_method(std::string_view s) {
  if (s == "mta") return AttackMethod::mta;
  if (s == "gap") return AttackMethod::gap;
  if (s == "fgsm") return AttackMethod::fgsm;
  throw ConfigError("unknown method '" + std::string(s) + "' (expected mta, gap or fgsm)");
}

void validate(const AttackConfig& c, std::size_t tasks) {
  if (tasks == 0) throw ConfigError("attack: no tasks");
  if (!(c.eps > 0.0) || !std::isfinite(c.eps)) throw ConfigError("attack: eps must be positive");
  if (c.batch == 0) throw ConfigError("attack: batch must be positive");
  if (!(c.lr > 0.0)) throw ConfigError("attack: lr must be positive");
  if (!(c.delta > 0.0) || c.delta >= 1.0) throw ConfigError("attack: delta must lie in (0, 1)");
  if (c.blocks == 0) throw ConfigError("attack: blocks must be at least 1");
  if (c.width1 == 0 || c.width2 == 0) throw ConfigError("attack: widths must be positive");
  if (!c.weights.empty()) {
    for (double w : c.weights) {
      if (!(w > 0.0)) throw ConfigError("attack: weights must be positive");
    }
    const double total = std::accumulate(c.weights.begin(), c.weights.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("attack: weights must sum to 1");
    if (c.weights.size() != tasks) {
      throw ConfigError("attack: " + std::to_string(c.weights.size()) + " weights for " + std::to_string(tasks) +
                        " tasks");
    }
  }
  if (c.goal == AttackGoal::targeted) {
    if (c.targets.size() != tasks) throw ConfigError("attack: targeted goal needs one target class per task");
  } else if (!c.targets.empty()) {
    throw ConfigError("attack: targets are only valid with the targeted goal");
  }
}

std::vector<double> resolved_weights(const AttackConfig& c, std::size_t tasks) {
  if (!c.weights.empty()) return c.weights;
  return std::vector<double>(tasks, 1.0 / static_cast<double>(tasks));
}

GeneratorConfig generator_config(const AttackConfig& c, std::size_t tasks, const Shape& input_shape,
                                 std::uint64_t seed) {
  GeneratorConfig g;
  g.tasks = tasks;
  g.mode = c.mode;
  g.eps = c.eps;
  g.norm = c.norm;
  g.blocks = c.blocks;
  g.width1 = c.width1;
  g.width2 = c.width2;
  g.seed = seed;
  g.input_shape = input_shape;
  return g;
}

nlohmann::json attack_config_to_json(const AttackConfig& c) {
  return {{"goal", to_string(c.goal)}, {"mode", to_string(c.mode)}, {"eps", c.eps},       {"norm", to_string(c.norm)},
          {"weights", c.weights},      {"targets", c.targets},      {"epochs", c.epochs}, {"batch", c.batch},
          {"lr", c.lr},                {"seed", c.seed},            {"delta", c.delta},   {"blocks", c.blocks},
          {"width1", c.width1},        {"width2", c.width2},        {"probe", c.probe}};
}

AttackConfig attack_config_from_json(const nlohmann::json& j) {
  AttackConfig c;
  c.goal = parse_goal(j.at("goal").get<std::string>());
  c.mode = parse_mode(j.at("mode").get<std::string>());
  c.eps = j.at("eps").get<double>();
  c.norm = parse_norm(j.at("norm").get<std::string>());
  c.weights = j.at("weights").get<std::vector<double>>();
  c.targets = j.at("targets").get<std::vector<int>>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch = j.at("batch").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.delta = j.at("delta").get<double>();
  c.blocks = j.at("blocks").get<std::size_t>();
  c.width1 = j.at("width1").get<std::size_t>();
  c.width2 = j.at("width2").get<std::size_t>();
  c.probe = j.at("probe").get<std::size_t>();
  return c;
}

Var nontargeted_fooling(const Var& per_sample_loss, double delta) {
  return neg(mean(log(clamp_min(per_sample_loss, delta))));
}

Var targeted_fooling(const Var& per_sample_loss, double delta) { return mean(log(clamp_min(per_sample_loss, delta))); }

Var loss_nontargeted_classification(const VictimModel& victim, const Var& x_hat, std::span<const int> labels,
                                    double delta) {
  if (victim.task.kind != TaskKind::classification) throw ConfigError("non-targeted classification loss on a dense task");
  const Var probs = victim.forward(x_hat);
  if (labels.size() != probs.shape()[0]) throw ShapeError("label count does not match the batch");
  return nontargeted_fooling(cross_entropy_per_sample(probs, one_hot(labels, victim.task.num_classes), 1, delta),
                             delta);
}

Var loss_targeted_classification(const VictimModel& victim, const Var& x_hat, int target, double delta) {
  if (victim.task.kind != TaskKind::classification) throw ConfigError("targeted loss needs a classification task");
  if (target < 0 || static_cast<std::size_t>(target) >= victim.task.num_classes) {
    throw ConfigError("target class " + std::to_string(target) + " out of range");
  }
  const Var probs = victim.forward(x_hat);
  const std::vector<int> labels(probs.shape()[0], target);
  return targeted_fooling(cross_entropy_per_sample(probs, one_hot(labels, victim.task.num_classes), 1, delta), delta);
}

Var loss_nontargeted_dense(const VictimModel& victim, const Var& x_hat, const TaskBatch& batch, double delta) {
  if (!is_dense(victim.task.kind)) throw ConfigError("dense loss on a non-dense task");
  return nontargeted_fooling(task_loss_per_sample(victim.task, victim.forward(x_hat), batch, delta), delta);
}

Var multi_task_objective(std::span<const Var> losses, std::span<const double> weights) {
  if (losses.size() != weights.size() || losses.empty()) {
    throw ShapeError("objective: " + std::to_string(losses.size()) + " losses, " + std::to_string(weights.size()) +
                     " weights");
  }
  Var total = scale(losses[0], weights[0]);
  for (std::size_t t = 1; t < losses.size(); ++t) total = add(total, scale(losses[t], weights[t]));
  return total;
}

std::string TrainingLog::to_csv() const {
  std::string out = "epoch,objective";
  for (const auto& id : task_ids) out += ",loss." + id;
  for (const auto& id : task_ids) out += ",probe_fooling." + id;
  out += ",seconds\n";
  char buf[40];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, ",%.17g", v);
    return std::string(buf);
  };
  for (std::size_t e = 0; e < epochs(); ++e) {
    out += std::to_string(e + 1) + num(total[e]);
    for (double v : task_loss[e]) out += num(v);
    for (double v : probe_fooling[e]) out += num(v);
    out += num(seconds[e]) + "\n";
  }
  return out;
}

namespace {

std::string task_name(const TaskSpec& spec) {
  switch (spec.kind) {
    case TaskKind::classification: return "task" + std::to_string(spec.id);
    case TaskKind::dense_classification: return "segmentation";
    case TaskKind::dense_regression: return "depth";
    case TaskKind::dense_unit_vector: return "normals";
  }
  return "task";
}

Var task_fooling_loss(const VictimModel& victim, const Var& x_hat, const TaskBatch& batch, const AttackConfig& c,
                      std::size_t task) {
  if (c.goal == AttackGoal::targeted) return loss_targeted_classification(victim, x_hat, c.targets[task], c.delta);
  if (victim.task.kind == TaskKind::classification) {
    return loss_nontargeted_classification(victim, x_hat, batch.labels, c.delta);
  }
  return loss_nontargeted_dense(victim, x_hat, batch, c.delta);
}

void check_inputs(const VictimFamily& victims, const MultiTaskDataset& data, const AttackConfig& c) {
  validate(c, data.tasks.size());
  if (victims.models.size() != data.tasks.size()) throw ConfigError("attack: victim family does not match dataset");
  for (std::size_t t = 0; t < data.tasks.size(); ++t) {
    if (!victims.models[t].frozen) throw ConfigError("attack: victim " + std::to_string(t) + " is not frozen");
    if (data.tasks[t].train.empty() || data.tasks[t].test.empty()) throw ConfigError("attack: dataset is not split");
    if (c.goal == AttackGoal::targeted) {
      if (data.tasks[t].spec.kind != TaskKind::classification) {
        throw ConfigError("attack: targeted attacks need classification tasks");
      }
      if (c.targets[t] < 0 || static_cast<std::size_t>(c.targets[t]) >= data.tasks[t].spec.num_classes) {
        throw ConfigError("attack: target class " + std::to_string(c.targets[t]) + " out of range for task " +
                          std::to_string(t));
      }
    }
  }
}

// Perturbations for each (decoder, batch) pair. With shared inputs the encoder
// runs once for all decoders.
std::vector<Var> perturbations(const MultiTaskGenerator& g, const std::vector<TaskBatch>& batches, bool shared_inputs) {
  std::vector<Var> v;
  if (g.config().mode == PerturbMode::universal) {
    for (std::size_t k = 0; k < g.tasks(); ++k) v.push_back(g.universal(k));
  } else if (shared_inputs) {
    v = g.all_tasks(constant(batches.front().inputs));
  } else {
    for (std::size_t k = 0; k < g.tasks(); ++k) v.push_back(g.per_instance(k, constant(batches[k].inputs)));
  }
  return v;
}

double probe_fooling(const MultiTaskGenerator& g, std::size_t decoder, const VictimModel& victim, const TaskData& td,
                     std::size_t probe) {
  const std::span<const std::size_t> rows(td.test.data(), std::min(probe, td.test.size()));
  const TaskBatch b = make_batch(td, rows);
  const Tensor v = g.config().mode == PerturbMode::universal ? g.generate_universal(decoder)
                                                             : g.generate_per_instance(decoder, b.inputs);
  const Tensor adv = apply_perturbation(b.inputs, v);
  return fooling_ratio_outputs(td.spec.kind, victim.predict(b.inputs), victim.predict(adv), &b.targets);
}

// Trains g so that decoder k attacks task task_of[k].
TrainingLog train_generator(MultiTaskGenerator& g, const VictimFamily& victims, const MultiTaskDataset& data,
                            const AttackConfig& c, const std::vector<std::size_t>& task_of,
                            const std::vector<double>& weights) {
  const bool shared_inputs = data.suite == SuiteKind::shared_input;
  TrainingLog log;
  for (std::size_t t : task_of) log.task_ids.push_back(task_name(data.tasks[t].spec));
  std::size_t min_train = data.tasks.front().train.size();
  for (const auto& td : data.tasks) min_train = std::min(min_train, td.train.size());
  const std::size_t steps = (min_train + c.batch - 1) / c.batch;

  g.set_trainable(true);
  Adam opt(g.parameters(), {.lr = c.lr});
  const Rng order = Rng(c.seed).split("attack_batches");
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t epoch = 0; epoch < c.epochs; ++epoch) {
    std::vector<std::vector<std::size_t>> perm(data.tasks.size());
    for (std::size_t t = 0; t < data.tasks.size(); ++t) {
      perm[t] = data.tasks[t].train;
      Rng r = order.split(epoch).split(shared_inputs ? 0 : t);
      r.shuffle(perm[t]);
    }
    double total = 0.0;
    std::vector<double> per_task(task_of.size(), 0.0);
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<TaskBatch> batches;
      for (std::size_t t : task_of) {
        const std::size_t b = s * c.batch, e = std::min(perm[t].size(), b + c.batch);
        batches.push_back(make_batch(data.tasks[t], std::span<const std::size_t>(perm[t].data() + b, e - b)));
      }
      const std::vector<Var> v = perturbations(g, batches, shared_inputs);
      std::vector<Var> losses;
      for (std::size_t k = 0; k < task_of.size(); ++k) {
        const std::size_t t = task_of[k];
        const Var x_hat = apply_perturbation(constant(batches[k].inputs), v[k]);
        losses.push_back(task_fooling_loss(victims.models[t], x_hat, batches[k], c, t));
      }
      const Var objective = multi_task_objective(losses, weights);
      const double value = objective.value().item();
      if (!std::isfinite(value)) throw DivergenceError("attack training: non-finite objective", static_cast<int>(epoch));
      opt.zero_grad();
      backward(objective);
      opt.step();
      total += value;
      for (std::size_t k = 0; k < losses.size(); ++k) per_task[k] += losses[k].value().item();
    }
    log.total.push_back(total / static_cast<double>(steps));
    for (double& v : per_task) v /= static_cast<double>(steps);
    log.task_loss.push_back(per_task);
    std::vector<double> fool;
    for (std::size_t k = 0; k < task_of.size(); ++k) {
      fool.push_back(probe_fooling(g, k, victims.models[task_of[k]], data.tasks[task_of[k]], c.probe));
    }
    log.probe_fooling.push_back(std::move(fool));
    log.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  g.set_trainable(false);
  return log;
}

Shape suite_input_shape(const MultiTaskDataset& data) {
  const Shape& s = data.tasks.front().spec.input_shape;
  for (const auto& td : data.tasks) {
    if (td.spec.input_shape != s) throw ConfigError("attack: tasks must share one input shape");
  }
  return s;
}

}  // namespace

TrainingLog train_mta(MultiTaskGenerator& generator, const VictimFamily& victims, const MultiTaskDataset& data,
                      const AttackConfig& config) {
  check_inputs(victims, data, config);
  const std::size_t m = data.tasks.size();
  if (generator.tasks() != m) throw ConfigError("attack: generator has the wrong number of decoders");
  if (generator.config().input_shape != suite_input_shape(data)) throw ConfigError("attack: generator input shape");
  std::vector<std::size_t> task_of(m);
  std::iota(task_of.begin(), task_of.end(), 0);
  return train_generator(generator, victims, data, config, task_of, resolved_weights(config, m));
}

GapResult train_gap_baseline(const MultiTaskDataset& data, const VictimFamily& victims, const AttackConfig& config) {
  check_inputs(victims, data, config);
  const Shape shape = suite_input_shape(data);
  GapResult out;
  for (std::size_t t = 0; t < data.tasks.size(); ++t) {
    const std::uint64_t seed = Rng(config.seed).split("gap").split(t).next_u64();
    MultiTaskGenerator g = MultiTaskGenerator::create(generator_config(config, 1, shape, seed));
    out.logs.push_back(train_generator(g, victims, data, config, {t}, {1.0}));
    out.generators.push_back(std::move(g));
  }
  return out;
}

Tensor signed_step(Tensor grad, double eps) {
  if (!(eps > 0.0)) throw ConfigError("fgsm: eps must be positive");
  for (double& g : grad.data()) g = g > 0.0 ? eps : (g < 0.0 ? -eps : 0.0);
  return grad;
}

Tensor fgsm_perturb(const VictimModel& victim, const TaskBatch& batch, double eps) {
  if (!(eps > 0.0)) throw ConfigError("fgsm: eps must be positive");
  Var x = parameter(batch.inputs);
  backward(sum(task_loss_per_sample(victim.task, victim.forward(x), batch)));
  return signed_step(x.grad(), eps);
}

AttackArtifact train_attack(AttackMethod method, const MultiTaskDataset& data, const VictimFamily& victims,
                            const AttackConfig& config, std::vector<TrainingLog>* logs) {
  AttackArtifact a;
  a.method = method;
  a.config = config;
  if (method == AttackMethod::mta) {
    check_inputs(victims, data, config);
    const std::uint64_t seed = Rng(config.seed).split("mta").next_u64();
    a.generators.push_back(
        MultiTaskGenerator::create(generator_config(config, data.tasks.size(), suite_input_shape(data), seed)));
    TrainingLog log = train_mta(a.generators.front(), victims, data, config);
    if (logs) logs->push_back(std::move(log));
  } else if (method == AttackMethod::gap) {
    GapResult r = train_gap_baseline(data, victims, config);
    a.generators = std::move(r.generators);
    if (logs) *logs = std::move(r.logs);
  } else {
    check_inputs(victims, data, config);
    if (config.mode != PerturbMode::per_instance) throw ConfigError("fgsm is a per-instance attack");
    if (config.goal != AttackGoal::non_targeted) throw ConfigError("fgsm is a non-targeted attack");
  }
  return a;
}

Perturber make_perturber(const AttackArtifact& attack, const VictimFamily* source) {
  switch (attack.method) {
    case AttackMethod::mta: {
      const MultiTaskGenerator* g = &attack.generators.at(0);
      if (g->config().mode == PerturbMode::universal) {
        auto cache = std::make_shared<std::vector<Tensor>>();
        for (std::size_t t = 0; t < g->tasks(); ++t) cache->push_back(g->generate_universal(t));
        return [cache](std::size_t t, const TaskBatch&) { return cache->at(t); };
      }
      return [g](std::size_t t, const TaskBatch& b) { return g->generate_per_instance(t, b.inputs); };
    }
    case AttackMethod::gap: {
      const auto* gens = &attack.generators;
      if (gens->empty()) throw ConfigError("gap attack has no generators");
      if (gens->front().config().mode == PerturbMode::universal) {
        auto cache = std::make_shared<std::vector<Tensor>>();
        for (const auto& g : *gens) cache->push_back(g.generate_universal(0));
        return [cache](std::size_t t, const TaskBatch&) { return cache->at(t); };
      }
      return [gens](std::size_t t, const TaskBatch& b) { return gens->at(t).generate_per_instance(0, b.inputs); };
    }
    case AttackMethod::fgsm: {
      if (source == nullptr) throw ConfigError("fgsm needs the victim family it is crafted against");
      const double eps = attack.config.eps;
      const NormKind norm = attack.config.norm;
      return [source, eps, norm](std::size_t t, const TaskBatch& b) {
        Tensor v = fgsm_perturb(source->models.at(t), b, eps);
        return norm == NormKind::linf ? v : project_epsilon(v, eps, norm, true);
      };
    }
  }
  throw ConfigError("unknown attack method");
}

AttackDescriptor describe(const AttackArtifact& a) {
  AttackDescriptor d;
  d.method = std::string(to_string(a.method));
  d.goal = std::string(to_string(a.config.goal));
  d.mode = std::string(to_string(a.config.mode));
  d.eps = a.config.eps;
  d.norm = std::string(to_string(a.config.norm));
  d.seed = a.config.seed;
  d.targets = a.config.targets;
  return d;
}

std::size_t count_parameters(const AttackArtifact& attack) { return count_parameters(std::span(attack.generators)); }

NamedTensorArchive attack_to_archive(const AttackArtifact& attack) {
  NamedTensorArchive a;
  nlohmann::json gens = nlohmann::json::array();
  for (std::size_t k = 0; k < attack.generators.size(); ++k) {
    const NamedTensorArchive g = generator_to_archive(attack.generators[k]);
    for (const auto& [name, t] : g.entries()) a.add("g" + std::to_string(k) + "." + name, t);
    gens.push_back(g.manifest());
  }
  a.manifest() = {{"type", "attack"},
                  {"method", to_string(attack.method)},
                  {"config", attack_config_to_json(attack.config)},
                  {"generators", gens}};
  return a;
}

AttackArtifact attack_from_archive(const NamedTensorArchive& archive) {
  AttackArtifact out;
  try {
    const auto& m = archive.manifest();
    if (m.at("type") != "attack") throw FormatError("archive is not an attack checkpoint");
    out.method = parse_method(m.at("method").get<std::string>());
    out.config = attack_config_from_json(m.at("config"));
    const auto& gens = m.at("generators");
    for (std::size_t k = 0; k < gens.size(); ++k) {
      NamedTensorArchive g;
      const std::string prefix = "g" + std::to_string(k) + ".";
      for (const auto& [name, t] : archive.entries()) {
        if (name.rfind(prefix, 0) == 0) g.add(name.substr(prefix.size()), t);
      }
      g.manifest() = gens[k];
      out.generators.push_back(generator_from_archive(g));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("attack manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("attack manifest: ") + e.what());
  }
  return out;
}

void save_attack(const AttackArtifact& attack, const std::filesystem::path& path) {
  attack_to_archive(attack).save(path);
}

AttackArtifact load_attack(const std::filesystem::path& path) {
  return attack_from_archive(NamedTensorArchive::load(path));
}

}  // namespace mta
