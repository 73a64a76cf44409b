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

#include "mta/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "mta/errors.hpp"

namespace mta {

namespace {

constexpr std::size_t kEvalChunk = 64;

std::vector<double> pixel_errors(TaskKind kind, const Tensor& out, const Tensor& targets) {
  if (kind == TaskKind::dense_unit_vector) return angle_degrees(out, targets);
  std::vector<double> e(out.size());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = std::abs(out.values()[i] - targets.values()[i]);
  return e;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.size() == 1) return parts.front();
  Shape s = parts.front().shape();
  s[0] = 0;
  std::vector<double> data;
  for (const Tensor& p : parts) {
    s[0] += p.dim(0);
    data.insert(data.end(), p.values().begin(), p.values().end());
  }
  return Tensor(std::move(s), std::move(data));
}

std::string task_label(const TaskSpec& spec) {
  switch (spec.kind) {
    case TaskKind::classification: return "task" + std::to_string(spec.id);
    case TaskKind::dense_classification: return "segmentation";
    case TaskKind::dense_regression: return "depth";
    case TaskKind::dense_unit_vector: return "normals";
  }
  return "task";
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

double fooling_ratio_outputs(TaskKind kind, const Tensor& clean_out, const Tensor& adv_out, const Tensor* targets) {
  if (clean_out.shape() != adv_out.shape()) {
    throw ShapeError("fooling ratio: outputs " + shape_str(clean_out.shape()) + " and " + shape_str(adv_out.shape()) +
                     " are not aligned");
  }
  if (is_classification(kind)) return 1.0 - agreement(argmax_labels(clean_out), argmax_labels(adv_out));
  if (targets == nullptr) throw ConfigError("fooling ratio of a regression task needs targets");
  const auto before = pixel_errors(kind, clean_out, *targets);
  const auto after = pixel_errors(kind, adv_out, *targets);
  std::size_t grew = 0;
  for (std::size_t i = 0; i < before.size(); ++i) grew += after[i] > before[i];
  return before.empty() ? 0.0 : static_cast<double>(grew) / static_cast<double>(before.size());
}

double fooling_ratio(const VictimModel& victim, const Tensor& clean, const Tensor& perturbed, const Tensor* targets) {
  if (clean.shape() != perturbed.shape()) throw ShapeError("fooling ratio: clean and perturbed batches differ in shape");
  return fooling_ratio_outputs(victim.task.kind, victim.predict(clean), victim.predict(perturbed), targets);
}

double accuracy(const VictimModel& victim, const Tensor& x, std::span<const int> labels) {
  if (!is_classification(victim.task.kind)) throw ConfigError("accuracy needs a classification task");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= victim.task.num_classes) throw ConfigError("label out of range");
  }
  return agreement(argmax_labels(victim.predict(x)), labels);
}

double top1_target_accuracy(const VictimModel& victim, const Tensor& perturbed, int target) {
  if (victim.task.kind != TaskKind::classification) throw ConfigError("target accuracy needs a classification task");
  if (target < 0 || static_cast<std::size_t>(target) >= victim.task.num_classes) {
    throw ConfigError("target class " + std::to_string(target) + " out of range");
  }
  return hit_ratio(argmax_labels(victim.predict(perturbed)), target);
}

void EvalReport::compute_averages() {
  averages.clear();
  if (tasks.empty()) return;
  for (const auto& [key, _] : tasks.front()) {
    double acc = 0.0;
    bool everywhere = true;
    for (const MetricMap& m : tasks) {
      auto it = m.find(key);
      if (it == m.end()) {
        everywhere = false;
        break;
      }
      acc += it->second;
    }
    if (everywhere) averages[key] = acc / static_cast<double>(tasks.size());
  }
}

std::string primary_metric(TaskKind kind) {
  switch (kind) {
    case TaskKind::classification: return "accuracy";
    case TaskKind::dense_classification: return "pix_acc";
    case TaskKind::dense_regression: return "abs_err";
    case TaskKind::dense_unit_vector: return "angle_mean";
  }
  return "";
}

EvalReport evaluate_attack(const VictimFamily& family, const MultiTaskDataset& data, const Perturber& perturb,
                           const AttackDescriptor& attack) {
  if (family.models.size() != data.tasks.size()) {
    throw ConfigError("evaluation: family has " + std::to_string(family.models.size()) + " models, dataset has " +
                      std::to_string(data.tasks.size()) + " tasks");
  }
  const bool targeted = attack.goal == "targeted";
  if (targeted && attack.targets.size() != data.tasks.size()) throw ConfigError("evaluation: one target per task");
  EvalReport r;
  r.attack = attack;
  for (std::size_t t = 0; t < data.tasks.size(); ++t) {
    const TaskData& td = data.tasks[t];
    const VictimModel& m = family.models[t];
    std::vector<Tensor> clean_parts, adv_parts;
    for (std::size_t b = 0; b < td.test.size(); b += kEvalChunk) {
      const std::span<const std::size_t> rows(td.test.data() + b, std::min(kEvalChunk, td.test.size() - b));
      const TaskBatch batch = make_batch(td, rows);
      const Tensor adv = apply_perturbation(batch.inputs, perturb(t, batch));
      clean_parts.push_back(m.predict(batch.inputs));
      adv_parts.push_back(m.predict(adv));
    }
    const Tensor clean_out = concat_rows(clean_parts), adv_out = concat_rows(adv_parts);
    const bool cls = is_classification(td.spec.kind);
    const std::vector<int> labels = cls ? batch_labels(td, td.test) : std::vector<int>{};
    const Tensor targets = cls ? Tensor() : batch_targets(td, td.test);
    MetricMap mm;
    mm["fooling_ratio"] = fooling_ratio_outputs(td.spec.kind, clean_out, adv_out, &targets);
    if (td.spec.kind == TaskKind::classification) {
      mm["clean.accuracy"] = agreement(argmax_labels(clean_out), labels);
      mm["adv.accuracy"] = agreement(argmax_labels(adv_out), labels);
      if (targeted) mm["target_accuracy"] = hit_ratio(argmax_labels(adv_out), attack.targets[t]);
    } else {
      for (const auto& [k, v] : dense_metrics(td.spec.kind, clean_out, labels, targets, td.spec.num_classes)) {
        mm["clean." + k] = v;
      }
      for (const auto& [k, v] : dense_metrics(td.spec.kind, adv_out, labels, targets, td.spec.num_classes)) {
        mm["adv." + k] = v;
      }
    }
    r.task_ids.push_back(task_label(td.spec));
    r.kinds.push_back(td.spec.kind);
    r.tasks.push_back(std::move(mm));
  }
  r.compute_averages();
  return r;
}

EvalReport transfer_eval(const Perturber& perturb, const VictimFamily& target, const MultiTaskDataset& data,
                         AttackDescriptor attack) {
  if (target.models.size() != data.tasks.size()) throw ConfigError("transfer: family does not match the dataset");
  for (std::size_t t = 0; t < data.tasks.size(); ++t) {
    const TaskSpec& a = target.models[t].task;
    const TaskSpec& b = data.tasks[t].spec;
    if (a.kind != b.kind || a.input_shape != b.input_shape || a.num_classes != b.num_classes) {
      throw ConfigError("transfer: model " + std::to_string(t) + " was trained on a different suite");
    }
  }
  attack.family = target.kind == FamilyKind::independent ? "independent" : "shared_encoder";
  return evaluate_attack(target, data, perturb, attack);
}

namespace {

constexpr const char* kCsvHeader = "method,goal,mode,eps,norm,family,seed,targets,task,kind,metric,value";

}  // namespace

std::string report_to_csv(const EvalReport& r) {
  const AttackDescriptor& a = r.attack;
  std::string targets;
  for (std::size_t i = 0; i < a.targets.size(); ++i) targets += (i ? ";" : "") + std::to_string(a.targets[i]);
  const std::string prefix = a.method + "," + a.goal + "," + a.mode + "," + fmt(a.eps) + "," + a.norm + "," +
                             a.family + "," + std::to_string(a.seed) + "," + targets + ",";
  std::string out = std::string(kCsvHeader) + "\n";
  for (std::size_t t = 0; t < r.tasks.size(); ++t) {
    for (const auto& [k, v] : r.tasks[t]) {
      out += prefix + r.task_ids[t] + "," + std::string(to_string(r.kinds[t])) + "," + k + "," + fmt(v) + "\n";
    }
  }
  for (const auto& [k, v] : r.averages) out += prefix + "avg,-," + k + "," + fmt(v) + "\n";
  out += prefix + "-,-,parameters," + std::to_string(r.parameters) + "\n";
  for (const auto& [k, v] : r.timing) out += prefix + "-,-,seconds." + k + "," + fmt(v) + "\n";
  return out;
}

EvalReport report_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw FormatError("report: unexpected CSV header");
  EvalReport r;
  bool first = true;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 12) throw FormatError("report: line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
    try {
      if (first) {
        r.attack = {f[0], f[1], f[2], std::stod(f[3]), f[4], f[5], std::stoull(f[6]), {}};
        for (const auto& t : split(f[7], ';')) {
          if (!t.empty()) r.attack.targets.push_back(std::stoi(t));
        }
        first = false;
      }
      const std::string& task = f[8];
      const std::string& metric = f[10];
      const double value = std::stod(f[11]);
      if (task == "avg") {
        r.averages[metric] = value;
      } else if (metric == "parameters") {
        r.parameters = static_cast<std::size_t>(std::stoull(f[11]));
      } else if (metric.rfind("seconds.", 0) == 0) {
        r.timing[metric.substr(8)] = value;
      } else {
        auto it = std::find(r.task_ids.begin(), r.task_ids.end(), task);
        if (it == r.task_ids.end()) {
          r.task_ids.push_back(task);
          r.kinds.push_back(parse_task_kind(f[9]));
          r.tasks.emplace_back();
          it = r.task_ids.end() - 1;
        }
        r.tasks[static_cast<std::size_t>(it - r.task_ids.begin())][metric] = value;
      }
    } catch (const std::logic_error& e) {
      throw FormatError("report: line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (first) throw FormatError("report: no rows");
  return r;
}

namespace {

std::string cell_value(TaskKind kind, double v) {
  char buf[32];
  if (kind == TaskKind::classification || kind == TaskKind::dense_classification) {
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  } else {
    std::snprintf(buf, sizeof buf, "%.3f", v);
  }
  return buf;
}

std::string method_label(const AttackDescriptor& a) {
  std::string m = a.method;
  std::transform(m.begin(), m.end(), m.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  char eps[32];
  std::snprintf(eps, sizeof eps, "%g", a.eps);
  return m + " " + a.mode + " " + a.goal + " eps=" + eps;
}

}  // namespace

std::string reports_to_markdown(std::span<const EvalReport> reports) {
  if (reports.empty()) throw ConfigError("markdown: no reports");
  const EvalReport& head = reports.front();
  for (const EvalReport& r : reports) {
    if (r.task_ids != head.task_ids) throw ConfigError("markdown: reports cover different tasks");
  }
  std::set<std::string> primaries;
  for (TaskKind k : head.kinds) primaries.insert(primary_metric(k));
  const bool uniform = primaries.size() == 1;

  std::string out = "| Method |";
  for (std::size_t t = 0; t < head.task_ids.size(); ++t) {
    out += " " + head.task_ids[t] + " (" + primary_metric(head.kinds[t]) + ") |";
  }
  out += " Avg |\n|---|";
  for (std::size_t t = 0; t <= head.task_ids.size(); ++t) out += "---|";
  out += "\n| Clean |";
  for (std::size_t t = 0; t < head.tasks.size(); ++t) {
    out += " " + cell_value(head.kinds[t], head.tasks[t].at("clean." + primary_metric(head.kinds[t]))) + " |";
  }
  const std::string avg_key = uniform ? *primaries.begin() : "";
  out += uniform ? " " + cell_value(head.kinds[0], head.averages.at("clean." + avg_key)) + " |\n" : " - |\n";
  for (const EvalReport& r : reports) {
    out += "| " + method_label(r.attack) + " |";
    for (std::size_t t = 0; t < r.tasks.size(); ++t) {
      const std::string fool = cell_value(TaskKind::classification, r.tasks[t].at("fooling_ratio"));
      out += " " + fool + " (" + cell_value(r.kinds[t], r.tasks[t].at("adv." + primary_metric(r.kinds[t]))) + ") |";
    }
    out += " " + cell_value(TaskKind::classification, r.averages.at("fooling_ratio"));
    out += uniform ? " (" + cell_value(r.kinds[0], r.averages.at("adv." + avg_key)) + ") |\n" : " |\n";
  }
  return out;
}

std::size_t count_parameters(const MultiTaskGenerator& generator) { return generator.num_params(); }

std::size_t count_parameters(std::span<const MultiTaskGenerator> generators) {
  std::size_t n = 0;
  for (const auto& g : generators) n += g.num_params();
  return n;
}

std::size_t count_parameters(const VictimFamily& family) { return family.num_params(); }

double median_seconds(const std::function<void()>& fn, std::size_t repetitions, std::size_t warmup) {
  if (repetitions < 30) throw ConfigError("timing needs at least 30 repetitions");
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::vector<double> times;
  times.reserve(repetitions);
  for (std::size_t i = 0; i < repetitions; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t mid = times.size() / 2;
  return times.size() % 2 ? times[mid] : 0.5 * (times[mid - 1] + times[mid]);
}

double measure_inference_time(const MultiTaskGenerator& generator, const Tensor& x, std::size_t repetitions) {
  if (generator.config().mode == PerturbMode::universal) {
    return median_seconds([&] {
      for (std::size_t t = 0; t < generator.tasks(); ++t) (void)generator.generate_universal(t);
    }, repetitions);
  }
  return median_seconds([&] {
    const Tensor latent = generator.shared_encoding_path(x);
    for (std::size_t t = 0; t < generator.tasks(); ++t) (void)generator.decode_latent(t, latent);
  }, repetitions);
}

double measure_inference_time(std::span<const MultiTaskGenerator> generators, const Tensor& x,
                              std::size_t repetitions) {
  return median_seconds([&] {
    for (const auto& g : generators) {
      if (g.config().mode == PerturbMode::universal) {
        (void)g.generate_universal(0);
      } else {
        (void)g.generate_per_instance(0, x);
      }
    }
  }, repetitions);
}

}  // namespace mta
