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

#include "mta/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mta/errors.hpp"

namespace mta {

fs::path RunLayout::victims(FamilyKind kind) const {
  return root / "victims" / (kind == FamilyKind::independent ? "independent.nta" : "shared_encoder.nta");
}

std::string read_text(const fs::path& path) { return read_file(path); }

void write_text(const fs::path& path, const std::string& text) { write_file(path, text); }

namespace {

std::string family_label(FamilyKind k) { return k == FamilyKind::independent ? "independent" : "shared_encoder"; }

void write_resolved(const RunConfig& config, const fs::path& out) {
  write_text(RunLayout{out}.config(), config_to_json(config).dump(2) + "\n");
}

std::string victims_csv(const VictimFamily& fam) {
  std::string out = "family,task,metric,value\n";
  char buf[40];
  for (std::size_t t = 0; t < fam.models.size(); ++t) {
    for (const auto& [k, v] : fam.models[t].clean_metrics) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out += family_label(fam.kind) + "," + std::to_string(t) + "," + k + "," + buf + "\n";
    }
  }
  return out;
}

std::string method_name(const AttackArtifact& a) { return std::string(to_string(a.method)); }

void write_report(const EvalReport& r, const fs::path& dir, const std::string& stem) {
  write_text(dir / (stem + ".csv"), report_to_csv(r));
  write_text(dir / (stem + ".md"), reports_to_markdown(std::span(&r, 1)));
}

Tensor timing_input(const MultiTaskDataset& data) {
  const TaskData& td = data.tasks.front();
  const std::size_t n = std::min<std::size_t>(10, td.test.size());
  return batch_inputs(td, std::span<const std::size_t>(td.test.data(), n));
}

}  // namespace

void cmd_make_data(const RunConfig& config, const fs::path& out) {
  MultiTaskDataset ds = config.dataset.suite == SuiteKind::shared_label
                            ? make_shared_label_suite(config.seed, config.dataset.shared_label)
                            : make_shared_input_suite(config.seed, config.dataset.shared_input);
  ds = split_train_test(std::move(ds), config.dataset.test_fraction);
  save_dataset(ds, RunLayout{out}.dataset());
  write_resolved(config, out);
}

void cmd_train_victims(const RunConfig& config, const fs::path& data, const fs::path& out) {
  const MultiTaskDataset ds = load_dataset(data);
  VictimTrainOptions opts = config.victims.train;
  opts.seed = config.seed;
  const RunLayout layout{out};
  VictimFamily independent = train_independent_family(ds, config.victims.arch, opts);
  if (ds.suite == SuiteKind::shared_label) {
    for (std::size_t t = 0; t < independent.models.size(); ++t) {
      const double acc = independent.models[t].clean_metrics.at("accuracy");
      if (acc < config.victims.min_accuracy) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "victim %zu reaches %.4f clean accuracy, below the %.2f gate", t, acc,
                      config.victims.min_accuracy);
        throw GateError(buf);
      }
    }
  }
  save_family(independent, layout.victims(FamilyKind::independent));
  std::string csv = victims_csv(independent);
  if (ds.suite == SuiteKind::shared_input) {
    const VictimFamily shared = train_shared_encoder_family(ds, config.victims.arch, opts);
    save_family(shared, layout.victims(FamilyKind::shared_encoder));
    const std::string more = victims_csv(shared);
    csv += more.substr(more.find('\n') + 1);
  }
  write_text(layout.reports() / "victims.csv", csv);
  write_resolved(config, out);
}

void cmd_train_attack(const RunConfig& config, const fs::path& data, const fs::path& victims, const fs::path& out) {
  const MultiTaskDataset ds = load_dataset(data);
  const VictimFamily family = load_family(victims);
  AttackConfig ac = config.attack;
  ac.seed = config.seed;
  const std::uint64_t before = family.checksum();
  std::vector<TrainingLog> logs;
  const AttackArtifact attack = train_attack(config.method, ds, family, ac, &logs);
  if (family.checksum() != before) throw std::logic_error("attack training modified the victim parameters");
  const RunLayout layout{out};
  save_attack(attack, layout.generator(method_name(attack)));
  for (std::size_t k = 0; k < logs.size(); ++k) {
    const std::string suffix = logs.size() == 1 ? "" : "_g" + std::to_string(k);
    write_text(layout.reports() / ("train_" + method_name(attack) + suffix + ".csv"), logs[k].to_csv());
  }
  write_resolved(config, out);
}

void cmd_evaluate(const RunConfig& config, const fs::path& attack_path, const fs::path& victims, const fs::path& data,
                  const fs::path& out) {
  const MultiTaskDataset ds = load_dataset(data);
  const VictimFamily family = load_family(victims);
  const AttackArtifact attack = load_attack(attack_path);
  AttackDescriptor d = describe(attack);
  d.family = family_label(family.kind);
  EvalReport r = evaluate_attack(family, ds, make_perturber(attack, &family), d);
  r.parameters = count_parameters(attack);
  if (config.eval.timing && !attack.generators.empty()) {
    const Tensor x = timing_input(ds);
    r.timing["generate_all"] = attack.method == AttackMethod::mta
                                   ? measure_inference_time(attack.generators.front(), x, config.eval.timing_reps)
                                   : measure_inference_time(std::span(attack.generators), x, config.eval.timing_reps);
  }
  write_report(r, RunLayout{out}.reports(), "eval_" + method_name(attack));
}

void cmd_transfer(const fs::path& attack_path, const fs::path& victims_b, const fs::path& data, const fs::path& out,
                  const fs::path& source) {
  const MultiTaskDataset ds = load_dataset(data);
  const VictimFamily target = load_family(victims_b);
  const AttackArtifact attack = load_attack(attack_path);
  VictimFamily source_family;
  if (attack.method == AttackMethod::fgsm) {
    if (source.empty()) throw ConfigError("transfer of fgsm needs the source victim family");
    source_family = load_family(source);
  }
  const EvalReport r = transfer_eval(make_perturber(attack, &source_family), target, ds, describe(attack));
  write_report(r, RunLayout{out}.reports(), "transfer_" + method_name(attack));
}

std::string cmd_compare(std::span<const fs::path> run_dirs, const fs::path& out) {
  std::vector<EvalReport> reports;
  for (const fs::path& dir : run_dirs) {
    const fs::path reports_dir = RunLayout{dir}.reports();
    if (!fs::is_directory(reports_dir)) throw FormatError("'" + dir.string() + "' has no reports directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(reports_dir)) {
      const std::string name = e.path().filename().string();
      if (name.rfind("eval_", 0) == 0 && e.path().extension() == ".csv") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const fs::path& f : files) reports.push_back(report_from_csv(read_text(f)));
  }
  if (reports.empty()) throw FormatError("no evaluation reports found");
  const std::string md = reports_to_markdown(reports);
  write_text(out / "compare.md", md);
  return md;
}

void cmd_dump_perturbations(const fs::path& attack_path, const fs::path& data, const fs::path& out,
                            const fs::path& source) {
  const MultiTaskDataset ds = load_dataset(data);
  const AttackArtifact attack = load_attack(attack_path);
  VictimFamily source_family;
  if (attack.method == AttackMethod::fgsm) {
    if (source.empty()) throw ConfigError("dumping fgsm perturbations needs the source victim family");
    source_family = load_family(source);
  }
  const Perturber perturb = make_perturber(attack, &source_family);
  const fs::path dir = RunLayout{out}.dumps();
  const std::string ext = ds.tasks.front().spec.input_shape.at(0) == 3 ? ".ppm" : ".pgm";
  for (std::size_t t = 0; t < ds.tasks.size(); ++t) {
    const TaskData& td = ds.tasks[t];
    const std::size_t n = std::min<std::size_t>(3, td.test.size());
    const TaskBatch b = make_batch(td, std::span<const std::size_t>(td.test.data(), n));
    const Tensor v = perturb(t, b);
    const std::string stem = method_name(attack) + "_task" + std::to_string(t);
    if (v.dim(0) == 1) {
      write_pnm(dir / (stem + ext), v.slice_rows(0, 1), attack.config.eps);
    } else {
      for (std::size_t i = 0; i < v.dim(0); ++i) {
        write_pnm(dir / (stem + "_" + std::to_string(i) + ext), v.slice_rows(i, i + 1), attack.config.eps);
      }
    }
  }
}

void cmd_run(const RunConfig& config, const fs::path& out) {
  const RunLayout layout{out};
  cmd_make_data(config, out);
  cmd_train_victims(config, layout.dataset(), out);
  const fs::path victims = layout.victims(config.victims.family);
  cmd_train_attack(config, layout.dataset(), victims, out);
  const fs::path attack = layout.generator(to_string(config.method));
  cmd_evaluate(config, attack, victims, layout.dataset(), out);
  if (config.dataset.suite == SuiteKind::shared_input) {
    const FamilyKind other = config.victims.family == FamilyKind::independent ? FamilyKind::shared_encoder
                                                                              : FamilyKind::independent;
    cmd_transfer(attack, layout.victims(other), layout.dataset(), out, victims);
  }
  cmd_dump_perturbations(attack, layout.dataset(), out, victims);
}

}  // namespace mta
