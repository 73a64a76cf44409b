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

// Command-line front end for the multi-task attack experiments.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mta/errors.hpp"
#include "mta/experiment.hpp"

namespace {

using mta::fs::path;

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kFormat = 3, kDivergence = 4 };

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode, goal, method;
  std::optional<double> eps;
  std::string data, victims, victims_b, attack, source;
  std::vector<std::string> runs;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "run directory (default: config output)");
  cmd->add_option("--seed", o.seed, "override the global seed");
  cmd->add_option("--mode", o.mode, "universal or per_instance");
  cmd->add_option("--goal", o.goal, "non_targeted or targeted");
  cmd->add_option("--method", o.method, "mta, gap or fgsm");
  cmd->add_option("--eps", o.eps, "perturbation bound in data units");
}

mta::RunConfig load_config(const Options& o) {
  mta::RunConfig c = mta::parse_config(o.config.empty() ? std::string("{}") : mta::read_text(o.config));
  if (o.seed) c.seed = *o.seed;
  if (o.mode) c.attack.mode = mta::parse_mode(*o.mode);
  if (o.goal) c.attack.goal = mta::parse_goal(*o.goal);
  if (o.method) c.method = mta::parse_method(*o.method);
  if (o.eps) c.attack.eps = *o.eps;
  if (!o.out.empty()) c.output = o.out;
  mta::validate(c);
  return c;
}

path or_default(const std::string& given, const path& fallback) { return given.empty() ? fallback : path(given); }

int fail(int code, const std::string& message) {
  std::string line = message;
  for (char& ch : line) {
    if (ch == '\n') ch = ' ';
  }
  std::fprintf(stderr, "error %d: %s\n", code, line.c_str());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task adversarial attack experiments"};
  app.require_subcommand(1);
  Options o;

  auto* make_data = app.add_subcommand("make-data", "generate and split the synthetic suite");
  auto* train_victims = app.add_subcommand("train-victims", "train the victim family (both families on shared inputs)");
  auto* train_attack = app.add_subcommand("train-attack", "train the configured attack against the victims");
  auto* evaluate = app.add_subcommand("evaluate", "clean and attacked metrics, parameters and timing");
  auto* transfer = app.add_subcommand("transfer", "apply a trained attack to another victim family");
  auto* compare = app.add_subcommand("compare", "Markdown table over evaluated runs");
  auto* dump = app.add_subcommand("dump", "write perturbations as PGM/PPM images");
  auto* run = app.add_subcommand("run", "make-data, train-victims, train-attack, evaluate and dump");

  for (auto* cmd : {make_data, train_victims, train_attack, evaluate, transfer, compare, dump, run}) add_common(cmd, o);
  for (auto* cmd : {train_victims, train_attack, evaluate, transfer, dump}) {
    cmd->add_option("--data", o.data, "dataset archive (default: <out>/datasets/dataset.nta)");
  }
  for (auto* cmd : {train_attack, evaluate}) {
    cmd->add_option("--victims", o.victims, "victim family archive (default: configured family in <out>)");
  }
  for (auto* cmd : {evaluate, transfer, dump}) {
    cmd->add_option("--attack", o.attack, "attack archive (default: <out>/generators/<method>.nta)");
  }
  for (auto* cmd : {transfer, dump}) cmd->add_option("--source", o.source, "white-box family for fgsm");
  transfer->add_option("--victims-b", o.victims_b, "target family (default: the other family in <out>)");
  compare->add_option("--runs", o.runs, "run directories")->required()->expected(1, -1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kConfig, e.what());
  }

  try {
    const mta::RunConfig cfg = load_config(o);
    const path out = cfg.output;
    const mta::RunLayout layout{out};
    const path data = or_default(o.data, layout.dataset());
    const path victims = or_default(o.victims, layout.victims(cfg.victims.family));
    const path attack = or_default(o.attack, layout.generator(mta::to_string(cfg.method)));
    const path source = or_default(o.source, layout.victims(cfg.victims.family));

    if (*make_data) {
      mta::cmd_make_data(cfg, out);
    } else if (*train_victims) {
      mta::cmd_train_victims(cfg, data, out);
    } else if (*train_attack) {
      mta::cmd_train_attack(cfg, data, victims, out);
    } else if (*evaluate) {
      mta::cmd_evaluate(cfg, attack, victims, data, out);
    } else if (*transfer) {
      const mta::FamilyKind other = cfg.victims.family == mta::FamilyKind::independent
                                        ? mta::FamilyKind::shared_encoder
                                        : mta::FamilyKind::independent;
      mta::cmd_transfer(attack, or_default(o.victims_b, layout.victims(other)), data, out, source);
    } else if (*compare) {
      std::vector<path> dirs(o.runs.begin(), o.runs.end());
      std::cout << mta::cmd_compare(dirs, out);
    } else if (*dump) {
      mta::cmd_dump_perturbations(attack, data, out, source);
    } else if (*run) {
      mta::cmd_run(cfg, out);
    }
  } catch (const mta::ConfigError& e) {
    return fail(kConfig, e.what());
  } catch (const mta::FormatError& e) {
    return fail(kFormat, e.what());
  } catch (const mta::DivergenceError& e) {
    return fail(kDivergence, e.what());
  } catch (const mta::GateError& e) {
    return fail(kDivergence, e.what());
  } catch (const std::exception& e) {
    return fail(kFailure, e.what());
  }
  return kOk;
}
