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

#include <filesystem>
#include <span>
#include <string>

#include "mta/config.hpp"

namespace mta {

namespace fs = std::filesystem;

// Fixed layout of a run directory.
struct RunLayout {
  fs::path root;

  fs::path config() const { return root / "config.resolved"; }
  fs::path dataset() const { return root / "datasets" / "dataset.nta"; }
  fs::path victims(FamilyKind kind) const;
  fs::path generator(std::string_view method) const { return root / "generators" / (std::string(method) + ".nta"); }
  fs::path reports() const { return root / "reports"; }
  fs::path dumps() const { return root / "dumps"; }
};

// Thrown when victims miss the clean-accuracy gate.
class GateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Each command writes under `out` and returns nothing; failures throw
// ConfigError, FormatError, DivergenceError or GateError.
void cmd_make_data(const RunConfig& config, const fs::path& out);
// Trains the configured family. On a shared-input suite both families are
// trained so that transfer has a target.
void cmd_train_victims(const RunConfig& config, const fs::path& data, const fs::path& out);
void cmd_train_attack(const RunConfig& config, const fs::path& data, const fs::path& victims, const fs::path& out);
void cmd_evaluate(const RunConfig& config, const fs::path& attack, const fs::path& victims, const fs::path& data,
                  const fs::path& out);
// `source` is only needed for FGSM, which is crafted against a white-box family.
void cmd_transfer(const fs::path& attack, const fs::path& victims_b, const fs::path& data, const fs::path& out,
                  const fs::path& source = {});
// Markdown table with one row per evaluated attack found in the run
// directories, written to out/compare.md and returned.
std::string cmd_compare(std::span<const fs::path> run_dirs, const fs::path& out);
void cmd_dump_perturbations(const fs::path& attack, const fs::path& data, const fs::path& out,
                            const fs::path& source = {});
// make-data, train-victims, train-attack, evaluate and dumps in one go.
void cmd_run(const RunConfig& config, const fs::path& out);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

}  // namespace mta
