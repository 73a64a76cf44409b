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

#include "mta/victim.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "mta/adam.hpp"
#include "mta/errors.hpp"
#include "mta/losses.hpp"
#include "mta/nn.hpp"
#include "mta/parallel.hpp"
#include "mta/rng.hpp"

namespace mta {

namespace {

constexpr std::size_t kPredictChunk = 64;

Var run_layers(const std::vector<Layer>& layers, std::size_t begin, std::size_t end, Var x) {
  for (std::size_t i = begin; i < end; ++i) x = apply_layer(layers[i], x);
  return x;
}

Var output_activation(TaskKind kind, const Var& raw) {
  switch (kind) {
    case TaskKind::classification:
    case TaskKind::dense_classification: return softmax(raw, 1);
    case TaskKind::dense_regression: return raw;
    case TaskKind::dense_unit_vector: return normalize_channels(raw);
  }
  return raw;
}

void check_finite(double loss, std::size_t epoch, const char* what) {
  if (!std::isfinite(loss)) throw DivergenceError(std::string(what) + ": non-finite loss", static_cast<int>(epoch));
}

std::uint64_t checksum_params(const std::vector<Var>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const Var& p : params) h = checksum(p.value(), h);
  return h;
}

}  // namespace

Var VictimModel::forward_raw(const Var& x) const {
  if (x.shape().size() != 4 || Shape(x.shape().begin() + 1, x.shape().end()) != task.input_shape) {
    throw ShapeError("victim: input " + shape_str(x.shape()) + " does not match N x " + shape_str(task.input_shape));
  }
  return run_layers(layers, 0, layers.size(), x);
}

Var VictimModel::forward(const Var& x) const { return output_activation(task.kind, forward_raw(x)); }

Tensor VictimModel::predict(const Tensor& x) const {
  if (x.rank() == 0) throw ShapeError("victim: rank-0 input");
  const std::size_t n = x.dim(0);
  const std::size_t chunks = (n + kPredictChunk - 1) / kPredictChunk;
  std::vector<Tensor> parts(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t b = c * kPredictChunk, e = std::min(n, b + kPredictChunk);
    parts[c] = forward(constant(x.slice_rows(b, e))).value();
  });
  if (chunks == 1) return parts[0];
  Shape s = parts[0].shape();
  s[0] = n;
  std::vector<double> data;
  data.reserve(numel(s));
  for (const Tensor& p : parts) data.insert(data.end(), p.values().begin(), p.values().end());
  return Tensor(std::move(s), std::move(data));
}

std::vector<Var> VictimModel::parameters() const {
  std::vector<Var> out;
  for (const Layer& l : layers) {
    if (!l.spec.has_params()) continue;
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

std::size_t VictimModel::num_params() const { return count_values(parameters()); }

std::uint64_t VictimModel::checksum() const { return checksum_params(parameters()); }

void VictimModel::freeze() {
  for (Var& p : parameters()) {
    p.set_requires_grad(false);
    p.zero_grad();
  }
  frozen = true;
}

std::vector<LayerSpec> victim_layers(const TaskSpec& task, const VictimArchConfig& arch) {
  if (task.input_shape.size() != 3) throw ConfigError("victim: input shape must be C x H x W");
  const std::size_t c = task.input_shape[0], h = task.input_shape[1], w = task.input_shape[2];
  if (h % 4 != 0 || w % 4 != 0) throw ConfigError("victim: input height and width must be multiples of 4");
  if (task.output_channels() == 0) throw ConfigError("victim: task has no outputs");
  std::vector<LayerSpec> layers;
  auto conv = [](std::size_t in, std::size_t out, std::size_t stride, bool relu) {
    return LayerSpec{LayerType::conv, in, out, 3, stride, 1, relu};
  };
  if (task.kind == TaskKind::classification) {
    const std::size_t wd = arch.width;
    if (wd == 0) throw ConfigError("victim: width must be positive");
    layers.push_back(conv(c, wd, 2, true));
    layers.push_back(conv(wd, 2 * wd, 2, true));
    layers.push_back({LayerType::flatten});
    layers.push_back({LayerType::linear, 2 * wd * (h / 4) * (w / 4), task.num_classes});
  } else {
    const std::size_t wd = arch.dense_width;
    if (wd == 0) throw ConfigError("victim: dense width must be positive");
    layers.push_back(conv(c, wd, 2, true));
    layers.push_back(conv(wd, 2 * wd, 2, true));
    layers.push_back({LayerType::upsample});
    layers.push_back(conv(2 * wd, wd, 1, true));
    layers.push_back({LayerType::upsample});
    layers.push_back(conv(wd, task.output_channels(), 1, false));
  }
  return layers;
}

VictimModel build_victim(const TaskSpec& task, const VictimArchConfig& arch, std::uint64_t seed) {
  VictimModel m;
  m.task = task;
  Rng rng = Rng(seed).split("victim").split(task.id);
  for (const LayerSpec& spec : victim_layers(task, arch)) m.layers.push_back(make_layer(rng, spec));
  return m;
}

MetricMap evaluate_clean(const VictimModel& model, const TaskData& task, std::span<const std::size_t> rows) {
  const Tensor x = batch_inputs(task, rows);
  const Tensor out = model.predict(x);
  if (task.spec.kind == TaskKind::classification) {
    return {{"accuracy", agreement(argmax_labels(out), batch_labels(task, rows))}};
  }
  const std::vector<int> labels = is_classification(task.spec.kind) ? batch_labels(task, rows) : std::vector<int>{};
  const Tensor targets = is_classification(task.spec.kind) ? Tensor() : batch_targets(task, rows);
  return dense_metrics(task.spec.kind, out, labels, targets, task.spec.num_classes);
}

namespace {

std::vector<std::vector<std::size_t>> epoch_batches(std::vector<std::size_t> rows, std::size_t batch, Rng rng) {
  rng.shuffle(rows);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < rows.size(); b += batch) {
    out.emplace_back(rows.begin() + static_cast<std::ptrdiff_t>(b),
                     rows.begin() + static_cast<std::ptrdiff_t>(std::min(rows.size(), b + batch)));
  }
  return out;
}

void validate_training(const VictimTrainOptions& o, const TaskData& task) {
  if (o.batch == 0) throw ConfigError("victim training: batch size must be positive");
  if (!(o.lr > 0.0)) throw ConfigError("victim training: learning rate must be positive");
  if (task.train.empty() || task.test.empty()) throw ConfigError("victim training: dataset has not been split");
}

}  // namespace

MetricMap train_victim(VictimModel& model, const TaskData& task, const VictimTrainOptions& options) {
  validate_training(options, task);
  if (model.task.kind != task.spec.kind || model.task.input_shape != task.spec.input_shape ||
      model.task.num_classes != task.spec.num_classes) {
    throw ConfigError("train_victim: model was built for a different task");
  }
  for (Var& p : model.parameters()) p.set_requires_grad(true);
  model.frozen = false;
  Adam opt(model.parameters(), {.lr = options.lr});
  Rng rng = Rng(options.seed).split("victim_train").split(task.spec.id);
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    for (const auto& rows : epoch_batches(task.train, options.batch, rng.split(epoch))) {
      const TaskBatch b = make_batch(task, rows);
      Var loss = mean(task_loss_per_sample(task.spec, model.forward(constant(b.inputs)), b));
      check_finite(loss.value().item(), epoch, "train_victim");
      opt.zero_grad();
      backward(loss);
      opt.step();
    }
  }
  model.freeze();
  model.clean_metrics = evaluate_clean(model, task, task.test);
  return model.clean_metrics;
}

std::vector<Var> VictimFamily::parameters() const {
  std::vector<Var> all;
  for (const VictimModel& m : models) {
    auto p = m.parameters();
    all.insert(all.end(), p.begin(), p.end());
  }
  return unique_params(all);
}

std::size_t VictimFamily::num_params() const { return count_values(parameters()); }

std::uint64_t VictimFamily::checksum() const { return checksum_params(parameters()); }

VictimFamily train_independent_family(const MultiTaskDataset& data, const VictimArchConfig& arch,
                                      const VictimTrainOptions& options) {
  VictimFamily fam;
  fam.kind = FamilyKind::independent;
  for (const TaskData& t : data.tasks) {
    VictimModel m = build_victim(t.spec, arch, options.seed);
    train_victim(m, t, options);
    fam.models.push_back(std::move(m));
  }
  return fam;
}

VictimFamily train_shared_encoder_family(const MultiTaskDataset& data, const VictimArchConfig& arch,
                                         const VictimTrainOptions& options) {
  if (data.suite != SuiteKind::shared_input) {
    throw ConfigError("shared-encoder family requires a shared_input suite");
  }
  for (const TaskData& t : data.tasks) validate_training(options, t);
  VictimFamily fam;
  fam.kind = FamilyKind::shared_encoder;
  fam.shared_layers = 2;
  Rng rng = Rng(options.seed).split("shared_encoder_family");
  Rng enc_rng = rng.split("encoder");
  std::vector<Layer> encoder;
  const auto first_layers = victim_layers(data.tasks.front().spec, arch);
  for (std::size_t i = 0; i < fam.shared_layers; ++i) encoder.push_back(make_layer(enc_rng, first_layers[i]));
  for (const TaskData& t : data.tasks) {
    VictimModel m;
    m.task = t.spec;
    m.layers = encoder;
    Rng head_rng = rng.split("head").split(t.spec.id);
    const auto specs = victim_layers(t.spec, arch);
    for (std::size_t i = fam.shared_layers; i < specs.size(); ++i) m.layers.push_back(make_layer(head_rng, specs[i]));
    fam.models.push_back(std::move(m));
  }

  const double weight = 1.0 / static_cast<double>(fam.models.size());
  Adam opt(fam.parameters(), {.lr = options.lr});
  Rng order = rng.split("order");
  const TaskData& lead = data.tasks.front();
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    for (const auto& rows : epoch_batches(lead.train, options.batch, order.split(epoch))) {
      Var code = run_layers(fam.models.front().layers, 0, fam.shared_layers, constant(batch_inputs(lead, rows)));
      Var loss = constant(Tensor::scalar(0.0));
      for (std::size_t t = 0; t < fam.models.size(); ++t) {
        const VictimModel& m = fam.models[t];
        const TaskBatch b = make_batch(data.tasks[t], rows);
        Var out = output_activation(m.task.kind, run_layers(m.layers, fam.shared_layers, m.layers.size(), code));
        loss = add(loss, scale(mean(task_loss_per_sample(m.task, out, b)), weight));
      }
      check_finite(loss.value().item(), epoch, "train_shared_encoder_family");
      opt.zero_grad();
      backward(loss);
      opt.step();
    }
  }
  for (std::size_t t = 0; t < fam.models.size(); ++t) {
    fam.models[t].freeze();
    fam.models[t].clean_metrics = evaluate_clean(fam.models[t], data.tasks[t], data.tasks[t].test);
  }
  return fam;
}

namespace {

nlohmann::json model_manifest(const VictimModel& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (const Layer& l : m.layers) layers.push_back(layer_to_json(l.spec));
  return {{"task", task_spec_to_json(m.task)}, {"layers", layers}, {"frozen", m.frozen},
          {"clean_metrics", m.clean_metrics}};
}

VictimModel model_from_manifest(const nlohmann::json& j) {
  VictimModel m;
  m.task = task_spec_from_json(j.at("task"));
  for (const auto& lj : j.at("layers")) m.layers.push_back({layer_from_json(lj), Var(), Var()});
  m.frozen = j.at("frozen").get<bool>();
  m.clean_metrics = j.at("clean_metrics").get<MetricMap>();
  return m;
}

Var load_param(const NamedTensorArchive& a, const std::string& name, const Shape& expected, bool trainable) {
  const Tensor& t = a.get(name);
  if (t.shape() != expected) {
    throw FormatError("checkpoint: '" + name + "' has shape " + shape_str(t.shape()) + ", architecture expects " +
                      shape_str(expected));
  }
  return Var(t, trainable);
}

}  // namespace

NamedTensorArchive family_to_archive(const VictimFamily& fam) {
  NamedTensorArchive a;
  nlohmann::json models = nlohmann::json::array();
  for (std::size_t t = 0; t < fam.models.size(); ++t) {
    const VictimModel& m = fam.models[t];
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
      if (!m.layers[i].spec.has_params()) continue;
      const bool shared = i < fam.shared_layers;
      if (shared && t > 0) continue;
      const std::string p = (shared ? std::string("shared") : "m" + std::to_string(t)) + ".L" + std::to_string(i);
      a.add(p + ".weight", m.layers[i].weight.value());
      a.add(p + ".bias", m.layers[i].bias.value());
    }
    models.push_back(model_manifest(m));
  }
  a.manifest() = {{"type", "victim_family"},
                  {"family", fam.kind == FamilyKind::independent ? "independent" : "shared_encoder"},
                  {"shared_layers", fam.shared_layers},
                  {"models", models}};
  return a;
}

VictimFamily family_from_archive(const NamedTensorArchive& a) {
  try {
    const auto& m = a.manifest();
    if (m.at("type") != "victim_family") throw FormatError("archive is not a victim family");
    VictimFamily fam;
    const std::string kind = m.at("family").get<std::string>();
    if (kind != "independent" && kind != "shared_encoder") throw FormatError("unknown family kind '" + kind + "'");
    fam.kind = kind == "independent" ? FamilyKind::independent : FamilyKind::shared_encoder;
    fam.shared_layers = m.at("shared_layers").get<std::size_t>();
    for (std::size_t t = 0; t < m.at("models").size(); ++t) {
      VictimModel model = model_from_manifest(m.at("models")[t]);
      for (std::size_t i = 0; i < model.layers.size(); ++i) {
        Layer& l = model.layers[i];
        if (!l.spec.has_params()) continue;
        const bool shared = i < fam.shared_layers;
        if (shared && t > 0) {
          l.weight = fam.models.front().layers[i].weight;
          l.bias = fam.models.front().layers[i].bias;
          continue;
        }
        const std::string p = (shared ? std::string("shared") : "m" + std::to_string(t)) + ".L" + std::to_string(i);
        l.weight = load_param(a, p + ".weight", weight_shape(l.spec), !model.frozen);
        l.bias = load_param(a, p + ".bias", {l.spec.out}, !model.frozen);
      }
      fam.models.push_back(std::move(model));
    }
    return fam;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("victim manifest: ") + e.what());
  }
}

void save_family(const VictimFamily& family, const std::filesystem::path& path) {
  family_to_archive(family).save(path);
}

VictimFamily load_family(const std::filesystem::path& path) {
  return family_from_archive(NamedTensorArchive::load(path));
}

void save_victim(const VictimModel& model, const std::filesystem::path& path) {
  VictimFamily single;
  single.models.push_back(model);
  save_family(single, path);
}

VictimModel load_victim(const std::filesystem::path& path) {
  VictimFamily fam = load_family(path);
  if (fam.models.size() != 1) throw FormatError("checkpoint holds " + std::to_string(fam.models.size()) + " models");
  return std::move(fam.models.front());
}

}  // namespace mta
