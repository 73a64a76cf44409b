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
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "mta/attack.hpp"
#include "mta/dataset.hpp"
#include "mta/victim.hpp"

namespace mta {

struct DatasetSection {
  SuiteKind suite = SuiteKind::shared_label;
  SharedLabelOptions shared_label;
  SharedInputOptions shared_input;
  double test_fraction = 0.2;
};

struct VictimSection {
  VictimArchConfig arch;
  VictimTrainOptions train;  // seed comes from RunConfig::seed
  FamilyKind family = FamilyKind::independent;
  double min_accuracy = 0.85;  // shared-label runs abort below this clean accuracy
};

struct EvalSection {
  bool timing = true;
  std::size_t timing_reps = 30;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string output = "runs/default";
  DatasetSection dataset;
  VictimSection victims;
  AttackMethod method = AttackMethod::mta;
  AttackConfig attack;  // generator settings live here too
  EvalSection eval;

  std::size_t tasks() const;
};

// Strict parse: unknown keys, wrong types and violated constraints throw
// ConfigError naming the offending key. Missing keys take their defaults.
RunConfig parse_config(std::string_view text);
RunConfig parse_config_json(const nlohmann::json& j);
// Every field, defaults included. parse_config(to_json(c)) reproduces c.
nlohmann::json config_to_json(const RunConfig& config);
// Re-validates after command-line overrides.
void validate(const RunConfig& config);

}  // namespace mta
