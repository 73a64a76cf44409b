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

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mta/archive.hpp"
#include "mta/config.hpp"
#include "mta/errors.hpp"
#include "mta/experiment.hpp"

namespace mta {
namespace {

namespace fs = std::filesystem;

std::string error_of(std::string_view text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mta_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

TEST(ArchiveTest, ByteLayout) {
  NamedTensorArchive a;
  a.add("w", Tensor({2}, std::vector<double>{1.0, -2.5}));
  a.manifest() = {{"k", 1}};
  const std::string bytes = a.serialize();
  std::string expected = "NTA1";
  expected += std::string("\x01\x00\x00\x00", 4);  // version
  expected += std::string("\x02\x00\x00\x00", 4);  // entries, manifest included
  expected += std::string("\x01\x00", 2) + "w";
  expected += std::string("\x01\x01", 2);  // f64, rank 1
  expected += std::string("\x02\x00\x00\x00", 4);
  for (double v : {1.0, -2.5}) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) expected.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  const std::string manifest = R"({"k":1})";
  expected += std::string("\x0c\x00", 2) + "__manifest__";
  expected += std::string("\x02\x01", 2);
  expected += std::string(1, static_cast<char>(manifest.size())) + std::string("\x00\x00\x00", 3);
  expected += manifest;
  EXPECT_EQ(bytes, expected);
}

TEST(ArchiveTest, RoundTripIsByteExact) {
  NamedTensorArchive a;
  a.add("x", Tensor({2, 3}, std::vector<double>{0.1, -0.0, 1e-300, 3, 4, -5}));
  a.add("y", Tensor::scalar(7.0));
  a.manifest() = {{"type", "test"}, {"nested", {1, 2.5, "s"}}};
  const std::string once = a.serialize();
  const NamedTensorArchive back = NamedTensorArchive::parse(once);
  EXPECT_EQ(back.serialize(), once);
  EXPECT_TRUE(std::ranges::equal(back.get("x").data(), a.get("x").data()));
  EXPECT_EQ(std::signbit(back.get("x")[1]), true);
  EXPECT_THROW(back.get("z"), FormatError);
}

TEST(ArchiveTest, ReadsSinglePrecisionEntries) {
  std::string bytes = "NTA1";
  bytes += std::string("\x01\x00\x00\x00\x02\x00\x00\x00", 8);
  bytes += std::string("\x01\x00", 2) + "f" + std::string("\x00\x01\x01\x00\x00\x00", 6);
  const auto bits = std::bit_cast<std::uint32_t>(0.5f);
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  bytes += std::string("\x0c\x00", 2) + "__manifest__" + std::string("\x02\x01\x02\x00\x00\x00", 6) + "{}";
  EXPECT_EQ(NamedTensorArchive::parse(bytes).get("f")[0], 0.5);
}

TEST(ArchiveTest, RejectsMalformedInput) {
  NamedTensorArchive a;
  a.add("w", Tensor({1}, 1.0));
  const std::string good = a.serialize();
  std::string wrong_version = good;
  wrong_version[4] = 2;
  EXPECT_THROW(NamedTensorArchive::parse(wrong_version), FormatError);
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(NamedTensorArchive::parse(bad_magic), FormatError);
  EXPECT_THROW(NamedTensorArchive::parse(good + "x"), FormatError);
  for (std::size_t cut = 0; cut < good.size(); ++cut) {
    EXPECT_THROW(NamedTensorArchive::parse(std::string_view(good).substr(0, cut)), FormatError) << cut;
  }
  EXPECT_THROW(NamedTensorArchive::load("/nonexistent/file.nta"), FormatError);
}

TEST(ConfigTest, DefaultsAndUniformWeights) {
  const RunConfig c = parse_config("{}");
  EXPECT_EQ(c.seed, 1u);
  EXPECT_TRUE(c.attack.weights.empty());
  EXPECT_EQ(resolved_weights(c.attack, c.tasks()), std::vector<double>(3, 1.0 / 3.0));
  EXPECT_EQ(c.attack.lr, 2e-4);
  EXPECT_EQ(c.attack.batch, 10u);
  EXPECT_EQ(parse_config_json(config_to_json(c)).seed, c.seed);
  EXPECT_EQ(config_to_json(parse_config(config_to_json(c).dump())), config_to_json(c));
}

TEST(ConfigTest, StrictErrorsNameTheKey) {
  EXPECT_NE(error_of(R"({"attack": {"weights": [0.5, 0.6]}, "dataset": {"tasks": 2}})").find("weights must sum to 1"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"attack": {"goal": "targeted"}})").find("target"), std::string::npos);
  EXPECT_NE(error_of(R"({"atack": {}})").find("unknown key 'atack'"), std::string::npos);
  EXPECT_NE(error_of(R"({"attack": {"lrr": 1}})").find("unknown key 'attack.lrr'"), std::string::npos);
  EXPECT_NE(error_of(R"({"attack": {"epochs": "ten"}})").find("attack.epochs"), std::string::npos);
  EXPECT_NE(error_of(R"({"generator": {"norm": "1"}})").find("norm"), std::string::npos);
  EXPECT_NE(error_of(R"({"dataset": {"suite": "shared_input", "classes": 5}})").find("dataset.classes"),
            std::string::npos);
  EXPECT_NE(error_of("{not json").find("JSON"), std::string::npos);
  EXPECT_NE(error_of(R"({"generator": {"eps": -1}})").find("eps"), std::string::npos);
}

TEST(ConfigTest, SectionsOverrideDefaults) {
  const RunConfig c = parse_config(R"({
    "seed": 4, "dataset": {"suite": "shared_input", "n": 60},
    "generator": {"mode": "per_instance", "eps": 0.04, "norm": "2", "blocks": 3},
    "attack": {"method": "gap", "epochs": 2}, "eval": {"timing": false}})");
  EXPECT_EQ(c.seed, 4u);
  EXPECT_EQ(c.dataset.suite, SuiteKind::shared_input);
  EXPECT_EQ(c.dataset.shared_input.n, 60u);
  EXPECT_EQ(c.attack.mode, PerturbMode::per_instance);
  EXPECT_EQ(c.attack.norm, NormKind::l2);
  EXPECT_EQ(c.attack.blocks, 3u);
  EXPECT_EQ(c.method, AttackMethod::gap);
  EXPECT_FALSE(c.eval.timing);
}

// A quick shared-label run: tiny suite, few epochs, gate disabled.
constexpr const char* kTinyConfig = R"({
  "seed": 3,
  "dataset": {"classes": 4, "n": 60},
  "victims": {"epochs": 3, "min_accuracy": 0.0},
  "attack": {"epochs": 2, "probe": 8},
  "eval": {"timing_reps": 30}
})";

TEST(CommandTest, MakeDataIsIdempotent) {
  const RunConfig c = parse_config(kTinyConfig);
  const fs::path a = scratch("data_a"), b = scratch("data_b");
  cmd_make_data(c, a);
  cmd_make_data(c, b);
  cmd_make_data(c, b);
  EXPECT_EQ(read_file(RunLayout{a}.dataset()), read_file(RunLayout{b}.dataset()));
  EXPECT_TRUE(fs::exists(RunLayout{a}.config()));
  EXPECT_EQ(parse_config(read_text(RunLayout{a}.config())).seed, 3u);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(CommandTest, PipelineReproducesReportsAndCompares) {
  RunConfig mta = parse_config(kTinyConfig);
  const fs::path one = scratch("run_one"), two = scratch("run_two");
  cmd_run(mta, one);
  cmd_run(mta, two);
  const RunLayout l1{one}, l2{two};
  for (const char* f : {"eval_mta.csv", "train_mta.csv", "victims.csv"}) ASSERT_TRUE(fs::exists(l1.reports() / f)) << f;
  auto strip_timing = [](const std::string& csv) {
    std::string out;
    std::istringstream in(csv);
    for (std::string line; std::getline(in, line);) {
      if (line.find(",seconds.") == std::string::npos) out += line + "\n";
    }
    return out;
  };
  EXPECT_EQ(strip_timing(read_text(l1.reports() / "eval_mta.csv")), strip_timing(read_text(l2.reports() / "eval_mta.csv")));
  EXPECT_EQ(read_file(l1.generator("mta")), read_file(l2.generator("mta")));
  EXPECT_EQ(read_file(l1.victims(FamilyKind::independent)), read_file(l2.victims(FamilyKind::independent)));
  EXPECT_TRUE(fs::exists(l1.dumps() / "mta_task0.pgm"));

  RunConfig gap = mta;
  gap.method = AttackMethod::gap;
  cmd_train_attack(gap, l1.dataset(), l1.victims(FamilyKind::independent), one);
  cmd_evaluate(gap, l1.generator("gap"), l1.victims(FamilyKind::independent), l1.dataset(), one);
  const std::vector<fs::path> dirs{one};
  const std::string table = cmd_compare(dirs, one);
  EXPECT_NE(table.find("| Method | task0 (accuracy) | task1 (accuracy) | task2 (accuracy) | Avg |"), std::string::npos);
  EXPECT_NE(table.find("| MTA "), std::string::npos);
  EXPECT_NE(table.find("| GAP "), std::string::npos);
  EXPECT_EQ(read_text(one / "compare.md"), table);
  fs::remove_all(one);
  fs::remove_all(two);
}

TEST(CommandTest, MissingArtifactsAreFormatErrors) {
  const RunConfig c = parse_config(kTinyConfig);
  const fs::path out = scratch("missing");
  EXPECT_THROW(cmd_train_victims(c, out / "nope.nta", out), FormatError);
  fs::remove_all(out);
}

TEST(CommandTest, GateRejectsIncompetentVictims) {
  RunConfig c = parse_config(kTinyConfig);
  c.victims.train.epochs = 0;
  c.victims.min_accuracy = 0.85;
  const fs::path out = scratch("gate");
  cmd_make_data(c, out);
  EXPECT_THROW(cmd_train_victims(c, RunLayout{out}.dataset(), out), GateError);
  fs::remove_all(out);
}

#ifdef MTA_CLI_PATH
int run_cli(const std::string& args) {
  const int status = std::system((std::string(MTA_CLI_PATH) + " " + args + " 2>/dev/null >/dev/null").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(CliTest, ExitCodes) {
  const fs::path dir = scratch("cli");
  fs::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream(dir / name) << text;
    return (dir / name).string();
  };
  EXPECT_EQ(run_cli("make-data --config " + write("unknown.json", R"({"bogus": 1})")), 2);
  EXPECT_EQ(run_cli("make-data --config " + write("targeted.json", R"({"attack": {"goal": "targeted"}})")), 2);
  EXPECT_EQ(run_cli("make-data --eps -1 --out " + (dir / "r").string()), 2);
  EXPECT_EQ(run_cli("no-such-command"), 2);
  EXPECT_EQ(run_cli("train-victims --out " + (dir / "empty").string()), 3);
  const std::string tiny = write("tiny.json", kTinyConfig);
  EXPECT_EQ(run_cli("make-data --config " + tiny + " --out " + (dir / "ok").string()), 0);
  EXPECT_EQ(run_cli("train-victims --config " + tiny + " --out " + (dir / "ok").string()), 0);
  fs::remove_all(dir);
}

TEST(CliTest, ErrorLineIsMachineParsable) {
  const fs::path out = scratch("cli_msg");
  const std::string cmd = std::string(MTA_CLI_PATH) + " train-victims --out " + out.string() + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  ASSERT_NE(pipe, nullptr);
  std::string text;
  char buf[256];
  while (fgets(buf, sizeof buf, pipe)) text += buf;
  pclose(pipe);
  EXPECT_EQ(text.rfind("error 3: ", 0), 0u) << text;
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
}
#endif

}  // namespace
}  // namespace mta
