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

#include "mta/config.hpp"

#include <set>

#include "mta/errors.hpp"

namespace mta {

namespace {

using nlohmann::json;

class Section {
 public:
  Section(const json& root, std::string path, std::set<std::string> allowed) : path_(std::move(path)) {
    if (root.is_null()) return;
    if (!root.is_object()) throw ConfigError("'" + path_ + "' must be an object");
    for (const auto& [k, _] : root.items()) {
      if (!allowed.contains(k)) throw ConfigError("unknown key '" + name(k) + "'");
    }
    obj_ = &root;
  }

  bool has(const std::string& key) const { return obj_ != nullptr && obj_->contains(key); }

  void read(const std::string& key, std::size_t& out) const {
    if (!has(key)) return;
    const json& v = obj_->at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
      throw ConfigError("type mismatch at '" + name(key) + "': expected a non-negative integer");
    }
    out = v.get<std::size_t>();
  }
  void read(const std::string& key, std::uint64_t& out, int) const {
    std::size_t v = out;
    read(key, v);
    out = v;
  }
  void read(const std::string& key, double& out) const {
    if (!has(key)) return;
    const json& v = obj_->at(key);
    if (!v.is_number()) throw ConfigError("type mismatch at '" + name(key) + "': expected a number");
    out = v.get<double>();
  }
  void read(const std::string& key, bool& out) const {
    if (!has(key)) return;
    const json& v = obj_->at(key);
    if (!v.is_boolean()) throw ConfigError("type mismatch at '" + name(key) + "': expected true or false");
    out = v.get<bool>();
  }
  void read(const std::string& key, std::string& out) const {
    if (!has(key)) return;
    const json& v = obj_->at(key);
    if (!v.is_string()) throw ConfigError("type mismatch at '" + name(key) + "': expected a string");
    out = v.get<std::string>();
  }
  void read(const std::string& key, std::vector<double>& out) const {
    if (!has(key)) return;
    const json& v = obj_->at(key);
    if (!v.is_array()) throw ConfigError("type mismatch at '" + name(key) + "': expected an array of numbers");
    out.clear();
    for (const json& e : v) {
      if (!e.is_number()) throw ConfigError("type mismatch at '" + name(key) + "': expected an array of numbers");
      out.push_back(e.get<double>());
    }
  }
  void read(const std::string& key, std::vector<int>& out) const {
    if (!has(key)) return;
    const json& v = obj_->at(key);
    if (!v.is_array()) throw ConfigError("type mismatch at '" + name(key) + "': expected an array of integers");
    out.clear();
    for (const json& e : v) {
      if (!e.is_number_integer()) {
        throw ConfigError("type mismatch at '" + name(key) + "': expected an array of integers");
      }
      out.push_back(e.get<int>());
    }
  }
  template <typename Parse, typename T>
  void read_enum(const std::string& key, T& out, Parse parse) const {
    std::string s;
    if (!has(key)) return;
    read(key, s);
    try {
      out = parse(s);
    } catch (const ConfigError& e) {
      throw ConfigError("'" + name(key) + "': " + e.what());
    }
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string path_;
  const json* obj_ = nullptr;
};

const json& child(const json& root, const char* key) {
  static const json null;
  return root.contains(key) ? root.at(key) : null;
}

FamilyKind parse_family(std::string_view s) {
  if (s == "independent") return FamilyKind::independent;
  if (s == "shared_encoder") return FamilyKind::shared_encoder;
  throw ConfigError("unknown family '" + std::string(s) + "' (expected independent or shared_encoder)");
}

std::string_view family_name(FamilyKind f) { return f == FamilyKind::independent ? "independent" : "shared_encoder"; }

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

std::size_t RunConfig::tasks() const {
  return dataset.suite == SuiteKind::shared_label ? dataset.shared_label.tasks : 3;
}

RunConfig parse_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config_json(j);
}

RunConfig parse_config_json(const json& j) {
  RunConfig c;
  const Section root(j, "", {"seed", "output", "dataset", "victims", "generator", "attack", "eval"});
  root.read("seed", c.seed, 0);
  root.read("output", c.output);

  const json& dj = child(j, "dataset");
  {
    const Section probe(dj, "dataset", {"suite", "tasks", "classes", "n", "channels", "resolution", "amplitude",
                                        "noise", "domain_shift", "test_fraction"});
    probe.read_enum("suite", c.dataset.suite, parse_suite_kind);
    probe.read("test_fraction", c.dataset.test_fraction);
    if (c.dataset.suite == SuiteKind::shared_label) {
      SharedLabelOptions& o = c.dataset.shared_label;
      std::size_t channels = o.input_shape[0], resolution = o.input_shape[1];
      probe.read("tasks", o.tasks);
      probe.read("classes", o.classes);
      probe.read("n", o.n_per_task);
      probe.read("channels", channels);
      probe.read("resolution", resolution);
      probe.read("amplitude", o.amplitude);
      probe.read("noise", o.noise);
      probe.read("domain_shift", o.domain_shift);
      o.input_shape = {channels, resolution, resolution};
    } else {
      for (const char* k : {"tasks", "classes", "channels", "amplitude", "domain_shift"}) {
        if (probe.has(k)) throw ConfigError("'dataset." + std::string(k) + "' only applies to the shared_label suite");
      }
      SharedInputOptions& o = c.dataset.shared_input;
      probe.read("n", o.n);
      probe.read("resolution", o.resolution);
      probe.read("noise", o.noise);
    }
  }

  const Section vs(child(j, "victims"), "victims",
                   {"width", "dense_width", "epochs", "lr", "batch", "family", "min_accuracy"});
  vs.read("width", c.victims.arch.width);
  vs.read("dense_width", c.victims.arch.dense_width);
  vs.read("epochs", c.victims.train.epochs);
  vs.read("lr", c.victims.train.lr);
  vs.read("batch", c.victims.train.batch);
  vs.read_enum("family", c.victims.family, parse_family);
  vs.read("min_accuracy", c.victims.min_accuracy);

  const Section gs(child(j, "generator"), "generator", {"mode", "blocks", "width1", "width2", "eps", "norm"});
  gs.read_enum("mode", c.attack.mode, parse_mode);
  gs.read("blocks", c.attack.blocks);
  gs.read("width1", c.attack.width1);
  gs.read("width2", c.attack.width2);
  gs.read("eps", c.attack.eps);
  gs.read_enum("norm", c.attack.norm, parse_norm);

  const Section as(child(j, "attack"), "attack",
                   {"goal", "method", "weights", "targets", "epochs", "batch", "lr", "delta", "probe"});
  as.read_enum("goal", c.attack.goal, parse_goal);
  as.read_enum("method", c.method, parse_method);
  as.read("weights", c.attack.weights);
  as.read("targets", c.attack.targets);
  as.read("epochs", c.attack.epochs);
  as.read("batch", c.attack.batch);
  as.read("lr", c.attack.lr);
  as.read("delta", c.attack.delta);
  as.read("probe", c.attack.probe);

  const Section es(child(j, "eval"), "eval", {"timing", "timing_reps"});
  es.read("timing", c.eval.timing);
  es.read("timing_reps", c.eval.timing_reps);

  validate(c);
  return c;
}

void validate(const RunConfig& c) {
  require(c.dataset.test_fraction > 0.0 && c.dataset.test_fraction < 1.0, "dataset.test_fraction must lie in (0, 1)");
  if (c.dataset.suite == SuiteKind::shared_label) {
    const SharedLabelOptions& o = c.dataset.shared_label;
    require(o.tasks >= 1, "dataset.tasks must be at least 1");
    require(o.classes >= 2, "dataset.classes must be at least 2");
    require(o.n_per_task >= 10 * o.classes, "dataset.n must be at least 10 * classes");
    require(o.input_shape[0] >= 1, "dataset.channels must be at least 1");
    require(o.input_shape[1] >= 4 && o.input_shape[1] % 4 == 0, "dataset.resolution must be a positive multiple of 4");
    require(o.amplitude > 0.0, "dataset.amplitude must be positive");
    require(o.noise >= 0.0, "dataset.noise must be non-negative");
    require(o.domain_shift >= 0.0, "dataset.domain_shift must be non-negative");
  } else {
    const SharedInputOptions& o = c.dataset.shared_input;
    require(o.n >= 50, "dataset.n must be at least 50 for the shared_input suite");
    require(o.resolution >= 8 && o.resolution % 4 == 0, "dataset.resolution must be a multiple of 4 and at least 8");
    require(o.noise >= 0.0, "dataset.noise must be non-negative");
  }
  require(c.victims.arch.width > 0 && c.victims.arch.dense_width > 0, "victims widths must be positive");
  require(c.victims.train.lr > 0.0, "victims.lr must be positive");
  require(c.victims.train.batch > 0, "victims.batch must be positive");
  require(c.victims.min_accuracy >= 0.0 && c.victims.min_accuracy <= 1.0, "victims.min_accuracy must lie in [0, 1]");
  if (c.victims.family == FamilyKind::shared_encoder) {
    require(c.dataset.suite == SuiteKind::shared_input, "victims.family shared_encoder needs the shared_input suite");
  }
  require(c.eval.timing_reps >= 30, "eval.timing_reps must be at least 30");
  if (c.method == AttackMethod::fgsm) {
    require(c.attack.mode == PerturbMode::per_instance, "attack.method fgsm needs generator.mode per_instance");
    require(c.attack.goal == AttackGoal::non_targeted, "attack.method fgsm supports only the non_targeted goal");
  }
  if (c.attack.goal == AttackGoal::targeted) {
    require(c.dataset.suite == SuiteKind::shared_label, "targeted attacks need the shared_label suite");
    require(!c.attack.targets.empty(), "attack.goal targeted requires attack.targets");
    for (int t : c.attack.targets) {
      require(t >= 0 && static_cast<std::size_t>(t) < c.dataset.shared_label.classes,
              "attack.targets entries must be class indices in [0, classes)");
    }
  }
  validate(c.attack, c.tasks());
}

json config_to_json(const RunConfig& c) {
  json d = {{"suite", to_string(c.dataset.suite)}, {"test_fraction", c.dataset.test_fraction}};
  if (c.dataset.suite == SuiteKind::shared_label) {
    const SharedLabelOptions& o = c.dataset.shared_label;
    d.update({{"tasks", o.tasks},
              {"classes", o.classes},
              {"n", o.n_per_task},
              {"channels", o.input_shape[0]},
              {"resolution", o.input_shape[1]},
              {"amplitude", o.amplitude},
              {"noise", o.noise},
              {"domain_shift", o.domain_shift}});
  } else {
    d.update({{"n", c.dataset.shared_input.n},
              {"resolution", c.dataset.shared_input.resolution},
              {"noise", c.dataset.shared_input.noise}});
  }
  const AttackConfig& a = c.attack;
  return {{"seed", c.seed},
          {"output", c.output},
          {"dataset", d},
          {"victims",
           {{"width", c.victims.arch.width},
            {"dense_width", c.victims.arch.dense_width},
            {"epochs", c.victims.train.epochs},
            {"lr", c.victims.train.lr},
            {"batch", c.victims.train.batch},
            {"family", family_name(c.victims.family)},
            {"min_accuracy", c.victims.min_accuracy}}},
          {"generator",
           {{"mode", to_string(a.mode)},
            {"blocks", a.blocks},
            {"width1", a.width1},
            {"width2", a.width2},
            {"eps", a.eps},
            {"norm", to_string(a.norm)}}},
          {"attack",
           {{"goal", to_string(a.goal)},
            {"method", to_string(c.method)},
            {"weights", a.weights},
            {"targets", a.targets},
            {"epochs", a.epochs},
            {"batch", a.batch},
            {"lr", a.lr},
            {"delta", a.delta},
            {"probe", a.probe}}},
          {"eval", {{"timing", c.eval.timing}, {"timing_reps", c.eval.timing_reps}}}};
}

}  // namespace mta
