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

#include "mta/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <map>
#include <string>

#include "mta/errors.hpp"
#include "mta/rng.hpp"

namespace mta {

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::classification: return "classification";
    case TaskKind::dense_classification: return "dense_classification";
    case TaskKind::dense_regression: return "dense_regression";
    case TaskKind::dense_unit_vector: return "dense_unit_vector";
  }
  return "?";
}

std::string_view to_string(SuiteKind kind) {
  return kind == SuiteKind::shared_label ? "shared_label" : "shared_input";
}

TaskKind parse_task_kind(std::string_view s) {
  for (auto k : {TaskKind::classification, TaskKind::dense_classification, TaskKind::dense_regression,
                 TaskKind::dense_unit_vector}) {
    if (to_string(k) == s) return k;
  }
  throw FormatError("unknown task kind '" + std::string(s) + "'");
}

SuiteKind parse_suite_kind(std::string_view s) {
  if (s == "shared_label") return SuiteKind::shared_label;
  if (s == "shared_input") return SuiteKind::shared_input;
  throw FormatError("unknown suite kind '" + std::string(s) + "'");
}

bool is_classification(TaskKind kind) {
  return kind == TaskKind::classification || kind == TaskKind::dense_classification;
}

bool is_dense(TaskKind kind) { return kind != TaskKind::classification; }

std::size_t TaskSpec::output_channels() const {
  switch (kind) {
    case TaskKind::classification:
    case TaskKind::dense_classification: return num_classes;
    case TaskKind::dense_regression: return 1;
    case TaskKind::dense_unit_vector: return 3;
  }
  return 0;
}

nlohmann::json task_spec_to_json(const TaskSpec& spec) {
  return {{"id", spec.id},
          {"kind", to_string(spec.kind)},
          {"classes", spec.num_classes},
          {"input_shape", spec.input_shape},
          {"sampling", spec.sampling}};
}

TaskSpec task_spec_from_json(const nlohmann::json& j) {
  TaskSpec spec;
  spec.id = j.at("id").get<std::size_t>();
  spec.kind = parse_task_kind(j.at("kind").get<std::string>());
  spec.num_classes = j.at("classes").get<std::size_t>();
  spec.input_shape = j.at("input_shape").get<Shape>();
  spec.sampling = j.at("sampling");
  return spec;
}

namespace {

// 3x3 box blur per channel with clamped borders.
void blur(std::vector<double>& field, std::size_t channels, std::size_t h, std::size_t w) {
  std::vector<double> out(field.size());
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        double s = 0.0;
        int n = 0;
        for (int di = -1; di <= 1; ++di) {
          for (int dj = -1; dj <= 1; ++dj) {
            const long ii = static_cast<long>(i) + di, jj = static_cast<long>(j) + dj;
            if (ii < 0 || jj < 0 || ii >= static_cast<long>(h) || jj >= static_cast<long>(w)) continue;
            s += field[(c * h + static_cast<std::size_t>(ii)) * w + static_cast<std::size_t>(jj)];
            ++n;
          }
        }
        out[(c * h + i) * w + j] = s / n;
      }
    }
  }
  field.swap(out);
}

// Modified Gram-Schmidt in place; rows become orthonormal.
void orthonormalize(std::vector<std::vector<double>>& rows) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double d = std::inner_product(rows[i].begin(), rows[i].end(), rows[j].begin(), 0.0);
      for (std::size_t k = 0; k < rows[i].size(); ++k) rows[i][k] -= d * rows[j][k];
    }
    const double norm = std::sqrt(std::inner_product(rows[i].begin(), rows[i].end(), rows[i].begin(), 0.0));
    if (norm < 1e-12) throw ConfigError("shared_label suite: degenerate basis (too many classes for input size)");
    for (double& v : rows[i]) v /= norm;
  }
}

// Orthonormalized I + shift * G with G standard normal: the identity at
// shift 0, close to a uniformly random rotation for large shift.
std::vector<std::vector<double>> random_orthogonal(Rng& rng, std::size_t n, double shift) {
  std::vector<std::vector<double>> m(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) m[i][j] = (i == j ? 1.0 : 0.0) + shift * rng.normal();
  }
  orthonormalize(m);
  return m;
}

std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

}  // namespace

MultiTaskDataset make_shared_label_suite(std::uint64_t seed, const SharedLabelOptions& o) {
  if (o.tasks < 1) throw ConfigError("shared_label suite: need at least one task");
  if (o.classes < 2) throw ConfigError("shared_label suite: need at least 2 classes");
  if (o.n_per_task < 10 * o.classes) {
    throw ConfigError("shared_label suite: n_per_task must be >= 10 * classes (" + std::to_string(10 * o.classes) +
                      ")");
  }
  if (!(o.domain_shift >= 0.0)) throw ConfigError("shared_label suite: domain_shift must be >= 0");
  if (o.input_shape.size() != 3 || numel(o.input_shape) == 0) {
    throw ConfigError("shared_label suite: input shape must be C x H x W");
  }
  const std::size_t ch = o.input_shape[0], h = o.input_shape[1], w = o.input_shape[2];
  const std::size_t dim = ch * h * w;
  if (o.classes > dim) throw ConfigError("shared_label suite: more classes than input dimensions");

  Rng root = Rng(seed).split("shared_label");
  Rng basis_rng = root.split("basis");
  std::vector<std::vector<double>> basis(o.classes, std::vector<double>(dim));
  for (auto& b : basis) {
    for (double& v : b) v = basis_rng.normal();
    blur(b, ch, h, w);
    blur(b, ch, h, w);
  }
  orthonormalize(basis);

  MultiTaskDataset ds;
  ds.suite = SuiteKind::shared_label;
  ds.seed = seed;
  for (std::size_t t = 0; t < o.tasks; ++t) {
    Rng trng = root.split("task").split(t);
    Rng mix_rng = trng.split("mixing");
    const auto mixing = random_orthogonal(mix_rng, o.classes, o.domain_shift);
    std::vector<std::vector<double>> centres(o.classes, std::vector<double>(dim, 0.5));
    for (std::size_t c = 0; c < o.classes; ++c) {
      for (std::size_t j = 0; j < o.classes; ++j) {
        const double coef = o.amplitude * mixing[j][c];
        for (std::size_t k = 0; k < dim; ++k) centres[c][k] += coef * basis[j][k];
      }
    }

    std::vector<int> labels(o.n_per_task);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % o.classes);
    Rng order_rng = trng.split("order");
    order_rng.shuffle(labels);

    Rng noise_rng = trng.split("noise");
    Tensor inputs({o.n_per_task, ch, h, w});
    for (std::size_t i = 0; i < o.n_per_task; ++i) {
      const auto& centre = centres[static_cast<std::size_t>(labels[i])];
      for (std::size_t k = 0; k < dim; ++k) {
        inputs[i * dim + k] = std::clamp(centre[k] + o.noise * noise_rng.normal(), 0.0, 1.0);
      }
    }

    TaskData td;
    td.spec.id = t;
    td.spec.kind = TaskKind::classification;
    td.spec.num_classes = o.classes;
    td.spec.input_shape = o.input_shape;
    td.spec.sampling = {{"generator", "gaussian_clusters"}, {"amplitude", o.amplitude}, {"noise", o.noise},
                        {"domain_shift", o.domain_shift}};
    td.inputs = std::make_shared<const Tensor>(std::move(inputs));
    td.labels = std::move(labels);
    ds.tasks.push_back(std::move(td));
  }
  return ds;
}

namespace {

struct Scene {
  double horizon, wall_depth;
  double box_x0, box_y0, box_w, box_h, box_depth, box_tilt;
  double sph_cx, sph_cy, sph_r, sph_depth;
  double light[3];
  double albedo[4][3];
};

Scene sample_scene(Rng& rng, double res) {
  static constexpr double kBaseAlbedo[4][3] = {
      {0.55, 0.38, 0.22},  // floor
      {0.80, 0.78, 0.70},  // wall
      {0.85, 0.22, 0.20},  // sphere
      {0.22, 0.35, 0.85},  // box
  };
  Scene s{};
  s.horizon = rng.uniform(0.35, 0.6) * res;
  s.wall_depth = rng.uniform(4.0, 6.0);
  s.box_w = rng.uniform(0.25, 0.45) * res;
  s.box_h = rng.uniform(0.25, 0.45) * res;
  s.box_x0 = rng.uniform(0.0, res - s.box_w);
  s.box_y0 = rng.uniform(0.2 * res, res - s.box_h);
  s.box_depth = rng.uniform(1.5, 3.0);
  s.box_tilt = rng.uniform(-0.5, 0.5);
  s.sph_r = rng.uniform(0.18, 0.28) * res;
  s.sph_cx = rng.uniform(s.sph_r, res - s.sph_r);
  s.sph_cy = rng.uniform(s.sph_r, res - s.sph_r);
  s.sph_depth = rng.uniform(1.5, 3.0);
  double l[3] = {rng.uniform(-0.5, 0.5), rng.uniform(0.2, 0.8), 1.0};
  const double ln = std::sqrt(l[0] * l[0] + l[1] * l[1] + l[2] * l[2]);
  for (int i = 0; i < 3; ++i) s.light[i] = l[i] / ln;
  for (int c = 0; c < 4; ++c)
    for (int k = 0; k < 3; ++k) s.albedo[c][k] = std::clamp(kBaseAlbedo[c][k] + rng.uniform(-0.08, 0.08), 0.0, 1.0);
  return s;
}

}  // namespace

MultiTaskDataset make_shared_input_suite(std::uint64_t seed, const SharedInputOptions& o) {
  if (o.n < 50) throw ConfigError("shared_input suite: n must be >= 50");
  if (o.resolution < 4 || o.resolution % 4 != 0) {
    throw ConfigError("shared_input suite: resolution must be a positive multiple of 4");
  }
  const std::size_t r = o.resolution, pix = r * r;
  const double res = static_cast<double>(r);
  Rng root = Rng(seed).split("shared_input");
  Rng scene_rng = root.split("scenes");
  Rng noise_rng = root.split("noise");

  Tensor inputs({o.n, 3, r, r});
  std::vector<int> seg(o.n * pix);
  Tensor depth({o.n, 1, r, r});
  Tensor normal({o.n, 3, r, r});

  for (std::size_t i = 0; i < o.n; ++i) {
    const Scene s = sample_scene(scene_rng, res);
    for (std::size_t y = 0; y < r; ++y) {
      for (std::size_t x = 0; x < r; ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        int label;
        double d;
        double n[3];
        if (py < s.horizon) {
          label = 1;
          d = s.wall_depth;
          n[0] = 0.0, n[1] = 0.0, n[2] = 1.0;
        } else {
          label = 0;
          d = s.wall_depth - (s.wall_depth - 1.0) * (py - s.horizon) / (res - s.horizon);
          n[0] = 0.0, n[1] = 1.0, n[2] = 0.0;
        }
        if (px >= s.box_x0 && px < s.box_x0 + s.box_w && py >= s.box_y0 && py < s.box_y0 + s.box_h) {
          label = 3;
          d = s.box_depth;
          n[0] = std::sin(s.box_tilt), n[1] = 0.0, n[2] = std::cos(s.box_tilt);
        }
        const double dx = (px - s.sph_cx) / s.sph_r, dy = (py - s.sph_cy) / s.sph_r;
        const double rho2 = dx * dx + dy * dy;
        if (rho2 < 1.0) {
          label = 2;
          const double nz = std::sqrt(1.0 - rho2);
          d = s.sph_depth - 0.5 * nz;
          n[0] = dx, n[1] = -dy, n[2] = nz;
        }
        const double nn = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
        for (double& v : n) v /= nn;

        const double lambert = std::max(0.0, n[0] * s.light[0] + n[1] * s.light[1] + n[2] * s.light[2]);
        const double shade = (0.35 + 0.65 * lambert) * (0.55 + 0.45 / (1.0 + 0.15 * d));
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = s.albedo[label][c] * shade + o.noise * noise_rng.normal();
          inputs[((i * 3 + c) * r + y) * r + x] = std::clamp(v, 0.0, 1.0);
          normal[((i * 3 + c) * r + y) * r + x] = n[c];
        }
        seg[i * pix + y * r + x] = label;
        depth[i * pix + y * r + x] = d;
      }
    }
  }

  MultiTaskDataset ds;
  ds.suite = SuiteKind::shared_input;
  ds.seed = seed;
  auto shared = std::make_shared<const Tensor>(std::move(inputs));
  const nlohmann::json sampling = {{"generator", "procedural_scenes"}, {"noise", o.noise}};
  const Shape in_shape{3, r, r};

  TaskData segt;
  segt.spec = {0, TaskKind::dense_classification, 4, in_shape, sampling};
  segt.inputs = shared;
  segt.labels = std::move(seg);
  ds.tasks.push_back(std::move(segt));

  TaskData deptht;
  deptht.spec = {1, TaskKind::dense_regression, 0, in_shape, sampling};
  deptht.inputs = shared;
  deptht.targets = std::move(depth);
  ds.tasks.push_back(std::move(deptht));

  TaskData normt;
  normt.spec = {2, TaskKind::dense_unit_vector, 0, in_shape, sampling};
  normt.inputs = shared;
  normt.targets = std::move(normal);
  ds.tasks.push_back(std::move(normt));
  return ds;
}

MultiTaskDataset split_train_test(MultiTaskDataset ds, double test_fraction) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("split_train_test: test fraction must lie in (0, 1), got " + std::to_string(test_fraction));
  }
  ds.test_fraction = test_fraction;
  Rng root = Rng(ds.seed).split("split");

  auto finish = [](TaskData& t, std::vector<std::size_t> test) {
    std::sort(test.begin(), test.end());
    t.test = std::move(test);
    t.train.clear();
    std::size_t j = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (j < t.test.size() && t.test[j] == i) {
        ++j;
      } else {
        t.train.push_back(i);
      }
    }
  };

  if (ds.suite == SuiteKind::shared_input) {
    const std::size_t n = ds.tasks.front().size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = root.split("shared");
    rng.shuffle(order);
    const std::size_t n_test = std::clamp<std::size_t>(round_half_up(static_cast<double>(n) * test_fraction), 1, n - 1);
    std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    for (TaskData& t : ds.tasks) finish(t, test);
    return ds;
  }

  for (TaskData& t : ds.tasks) {
    Rng rng = root.split(t.spec.id);
    const std::size_t n = t.size();
    const std::size_t classes = t.spec.num_classes;
    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(t.labels[i])].push_back(i);

    // Largest-remainder apportionment of the test budget across classes.
    const std::size_t n_test = std::clamp<std::size_t>(round_half_up(static_cast<double>(n) * test_fraction), 1, n - 1);
    std::vector<std::size_t> quota(classes);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double exact = static_cast<double>(by_class[c].size()) * static_cast<double>(n_test) / static_cast<double>(n);
      quota[c] = static_cast<std::size_t>(std::floor(exact));
      assigned += quota[c];
      remainders.emplace_back(exact - std::floor(exact), c);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < n_test; ++k, ++assigned) ++quota[remainders[k % classes].second];

    std::vector<std::size_t> test;
    for (std::size_t c = 0; c < classes; ++c) {
      rng.shuffle(by_class[c]);
      test.insert(test.end(), by_class[c].begin(), by_class[c].begin() + static_cast<std::ptrdiff_t>(quota[c]));
    }
    finish(t, std::move(test));
  }
  return ds;
}

namespace {

Tensor index_tensor(const std::vector<std::size_t>& idx) {
  std::vector<double> v(idx.begin(), idx.end());
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

std::vector<std::size_t> indices_from(const Tensor& t) {
  std::vector<std::size_t> out;
  for (double v : t.data()) out.push_back(static_cast<std::size_t>(v));
  return out;
}

}  // namespace

NamedTensorArchive dataset_to_archive(const MultiTaskDataset& ds) {
  NamedTensorArchive a;
  nlohmann::json tasks = nlohmann::json::array();
  const bool shared = ds.suite == SuiteKind::shared_input;
  if (shared) a.add("inputs", *ds.tasks.front().inputs);
  for (const TaskData& t : ds.tasks) {
    const std::string p = "task" + std::to_string(t.spec.id) + ".";
    const std::string input_key = shared ? "inputs" : p + "inputs";
    if (!shared) a.add(input_key, *t.inputs);
    if (!t.labels.empty()) {
      a.add(p + "labels", Tensor({t.labels.size()}, std::vector<double>(t.labels.begin(), t.labels.end())));
    } else {
      a.add(p + "targets", t.targets);
    }
    if (!t.train.empty()) a.add(p + "train", index_tensor(t.train));
    if (!t.test.empty()) a.add(p + "test", index_tensor(t.test));
    nlohmann::json tj = task_spec_to_json(t.spec);
    tj["input_key"] = input_key;
    tasks.push_back(std::move(tj));
  }
  a.manifest() = {{"type", "dataset"},
                  {"suite", to_string(ds.suite)},
                  {"seed", ds.seed},
                  {"test_fraction", ds.test_fraction},
                  {"tasks", tasks}};
  return a;
}

MultiTaskDataset dataset_from_archive(const NamedTensorArchive& a) {
  const auto& m = a.manifest();
  try {
    if (m.at("type") != "dataset") throw FormatError("archive is not a dataset (type=" + m.at("type").dump() + ")");
    MultiTaskDataset ds;
    ds.suite = parse_suite_kind(m.at("suite").get<std::string>());
    ds.seed = m.at("seed").get<std::uint64_t>();
    ds.test_fraction = m.at("test_fraction").get<double>();
    std::map<std::string, std::shared_ptr<const Tensor>> inputs;
    for (const auto& tj : m.at("tasks")) {
      TaskData t;
      t.spec = task_spec_from_json(tj);
      const std::string key = tj.at("input_key").get<std::string>();
      auto it = inputs.find(key);
      if (it == inputs.end()) it = inputs.emplace(key, std::make_shared<const Tensor>(a.get(key))).first;
      t.inputs = it->second;
      const std::string p = "task" + std::to_string(t.spec.id) + ".";
      if (is_classification(t.spec.kind)) {
        for (double v : a.get(p + "labels").data()) t.labels.push_back(static_cast<int>(v));
      } else {
        t.targets = a.get(p + "targets");
      }
      if (a.contains(p + "train")) t.train = indices_from(a.get(p + "train"));
      if (a.contains(p + "test")) t.test = indices_from(a.get(p + "test"));
      ds.tasks.push_back(std::move(t));
    }
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset manifest: ") + e.what());
  }
}

void save_dataset(const MultiTaskDataset& ds, const std::filesystem::path& path) { dataset_to_archive(ds).save(path); }

MultiTaskDataset load_dataset(const std::filesystem::path& path) {
  return dataset_from_archive(NamedTensorArchive::load(path));
}

Tensor batch_inputs(const TaskData& task, std::span<const std::size_t> rows) { return task.inputs->gather_rows(rows); }

std::vector<int> batch_labels(const TaskData& task, std::span<const std::size_t> rows) {
  const std::size_t per = task.labels.size() / task.size();
  std::vector<int> out;
  out.reserve(rows.size() * per);
  for (std::size_t r : rows) {
    out.insert(out.end(), task.labels.begin() + static_cast<std::ptrdiff_t>(r * per),
               task.labels.begin() + static_cast<std::ptrdiff_t>((r + 1) * per));
  }
  return out;
}

Tensor batch_targets(const TaskData& task, std::span<const std::size_t> rows) { return task.targets.gather_rows(rows); }

}  // namespace mta
