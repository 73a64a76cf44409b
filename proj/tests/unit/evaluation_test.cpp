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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mta/attack.hpp"
#include "mta/errors.hpp"
#include "mta/evaluation.hpp"
#include "mta/metrics.hpp"
#include "test_util.hpp"

namespace mta {
namespace {

using testing::random_tensor;

// Rows of class scores with the argmax at each given label.
Tensor scores_for(const std::vector<int>& labels, std::size_t classes) {
  Tensor s({labels.size(), classes}, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) s[i * classes + labels[i]] = 1.0;
  return s;
}

TEST(FoolingRatioTest, Examples) {
  const std::vector<int> clean{0, 1, 2, 0, 1, 2, 0, 1, 2, 0};
  EXPECT_EQ(fooling_ratio_outputs(TaskKind::classification, scores_for(clean, 3), scores_for(clean, 3)), 0.0);
  std::vector<int> all = clean;
  for (int& y : all) y = (y + 1) % 3;
  EXPECT_EQ(fooling_ratio_outputs(TaskKind::classification, scores_for(clean, 3), scores_for(all, 3)), 1.0);
  std::vector<int> three = clean;
  three[1] = 0, three[4] = 2, three[8] = 1;
  EXPECT_NEAR(fooling_ratio_outputs(TaskKind::classification, scores_for(clean, 3), scores_for(three, 3)), 0.3, 1e-15);
}

TEST(FoolingRatioTest, DenseIsPerPixel) {
  // One image, 2x2 pixels, two classes; one pixel flips.
  Tensor clean({1, 2, 2, 2}, std::vector<double>{1, 1, 1, 1, 0, 0, 0, 0});
  Tensor adv = clean;
  adv[0] = 0.0, adv[4] = 1.0;
  EXPECT_EQ(fooling_ratio_outputs(TaskKind::dense_classification, clean, adv), 0.25);
}

TEST(FoolingRatioTest, RegressionCountsPixelsWhoseErrorGrew) {
  Tensor target({1, 1, 1, 4}, std::vector<double>{1, 1, 1, 1});
  Tensor clean({1, 1, 1, 4}, std::vector<double>{1.0, 0.5, 2.0, 1.2});
  Tensor adv({1, 1, 1, 4}, std::vector<double>{1.1, 0.8, 2.5, 1.2});
  EXPECT_EQ(fooling_ratio_outputs(TaskKind::dense_regression, clean, adv, &target), 0.5);
  EXPECT_THROW(fooling_ratio_outputs(TaskKind::dense_regression, clean, adv), ConfigError);
}

TEST(FoolingRatioTest, MisalignedBatchesThrow) {
  EXPECT_THROW(fooling_ratio_outputs(TaskKind::classification, scores_for({0, 1}, 2), scores_for({0}, 2)), ShapeError);
}

class BiasedVictimTest : public ::testing::Test {
 protected:
  // Zero weights and a bias that makes class 2 the argmax everywhere.
  static VictimModel always_two() {
    TaskSpec spec;
    spec.kind = TaskKind::classification;
    spec.num_classes = 4;
    spec.input_shape = {1, 8, 8};
    VictimModel m = build_victim(spec, {}, 1);
    for (Layer& l : m.layers) {
      if (!l.spec.has_params()) continue;
      for (double& w : l.weight.mutable_value().data()) w = 0.0;
      for (double& b : l.bias.mutable_value().data()) b = 0.0;
    }
    m.layers.back().bias.mutable_value()[2] = 5.0;
    m.freeze();
    return m;
  }
};

TEST_F(BiasedVictimTest, AccuracyAndTargetAccuracy) {
  const VictimModel m = always_two();
  const Tensor x({6, 1, 8, 8}, 0.3);
  const std::vector<int> twos(6, 2);
  EXPECT_EQ(accuracy(m, x, twos), 1.0);
  EXPECT_EQ(top1_target_accuracy(m, x, 2), 1.0);
  EXPECT_EQ(top1_target_accuracy(m, x, 0), 0.0);
  EXPECT_THROW(accuracy(m, x, std::vector<int>{2, 2}), ShapeError);
  EXPECT_THROW(accuracy(m, x, std::vector<int>(6, 7)), ConfigError);
}

TEST(DenseMetricsTest, PerfectPredictions) {
  Rng rng(1);
  const std::vector<int> labels{0, 1, 1, 3, 2, 2, 0, 3};  // two 2x2 images
  const MetricMap seg = dense_metrics(TaskKind::dense_classification, one_hot(labels, 4, {2, 2}), labels, Tensor(), 4);
  EXPECT_EQ(seg.at("miou"), 1.0);
  EXPECT_EQ(seg.at("pix_acc"), 1.0);

  const Tensor depth = random_tensor(rng, {2, 1, 3, 3}, 0.5, 4.0);
  const MetricMap d = dense_metrics(TaskKind::dense_regression, depth, {}, depth);
  EXPECT_EQ(d.at("abs_err"), 0.0);
  EXPECT_EQ(d.at("rel_err"), 0.0);

  Tensor normals({1, 3, 2, 2}, 0.0);
  for (std::size_t p = 0; p < 4; ++p) normals[2 * 4 + p] = 1.0;
  const MetricMap n = dense_metrics(TaskKind::dense_unit_vector, normals, {}, normals);
  EXPECT_EQ(n.at("angle_mean"), 0.0);
  EXPECT_EQ(n.at("angle_median"), 0.0);
  for (const char* k : {"within_11.25", "within_22.5", "within_30"}) EXPECT_EQ(n.at(k), 1.0);
}

TEST(DenseMetricsTest, AntipodalNormals) {
  Tensor up({1, 3, 2, 2}, 0.0), down({1, 3, 2, 2}, 0.0);
  for (std::size_t p = 0; p < 4; ++p) up[4 + p] = 1.0, down[4 + p] = -1.0;
  const MetricMap n = dense_metrics(TaskKind::dense_unit_vector, up, {}, down);
  EXPECT_NEAR(n.at("angle_mean"), 180.0, 1e-9);
  EXPECT_EQ(n.at("within_30"), 0.0);
}

TEST(DenseMetricsTest, WithinThresholdsAreMonotone) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor a = random_tensor(rng, {2, 3, 4, 4});
    const Tensor b = random_tensor(rng, {2, 3, 4, 4});
    const MetricMap n = dense_metrics(TaskKind::dense_unit_vector, a, {}, b);
    EXPECT_LE(n.at("within_11.25"), n.at("within_22.5"));
    EXPECT_LE(n.at("within_22.5"), n.at("within_30"));
  }
}

TEST(DenseMetricsTest, HandCountedIouAndDepthErrors) {
  // Image 1 truth {0,0,1,1}, pred {0,1,1,1}: IoU0 = 1/2, IoU1 = 2/3, classes 2 and 3 absent.
  // Image 2 truth {2,2,2,2}, pred {2,2,2,3}: IoU2 = 3/4, IoU3 = 0.
  const std::vector<int> truth{0, 0, 1, 1, 2, 2, 2, 2};
  const std::vector<int> pred{0, 1, 1, 1, 2, 2, 2, 3};
  const double expected = ((0.5 + 2.0 / 3.0) / 2.0 + (0.75 + 0.0) / 2.0) / 2.0;
  EXPECT_NEAR(mean_iou(pred, truth, 4, 4), expected, 1e-15);

  const Tensor target({1, 1, 1, 2}, std::vector<double>{2.0, 0.0});
  const Tensor guess({1, 1, 1, 2}, std::vector<double>{1.5, 1e-6});
  const MetricMap d = dense_metrics(TaskKind::dense_regression, guess, {}, target);
  EXPECT_NEAR(d.at("abs_err"), (0.5 + 1e-6) / 2.0, 1e-15);
  EXPECT_NEAR(d.at("rel_err"), (0.25 + 1.0) / 2.0, 1e-12);  // denominator floored at 1e-6
}

class EvalFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    SharedLabelOptions o;
    o.classes = 4;
    o.n_per_task = 100;
    data_ = new MultiTaskDataset(split_train_test(make_shared_label_suite(3, o), 0.2));
    VictimTrainOptions vo;
    vo.epochs = 5;
    family_ = new VictimFamily(train_independent_family(*data_, {}, vo));
  }
  static void TearDownTestSuite() {
    delete data_;
    delete family_;
  }
  static MultiTaskDataset* data_;
  static VictimFamily* family_;
};
MultiTaskDataset* EvalFixture::data_ = nullptr;
VictimFamily* EvalFixture::family_ = nullptr;

Perturber zero_perturber() {
  return [](std::size_t, const TaskBatch& b) { return Tensor(b.inputs.shape(), 0.0); };
}

TEST_F(EvalFixture, ZeroPerturbationChangesNothing) {
  const std::uint64_t before = family_->checksum();
  const EvalReport r = evaluate_attack(*family_, *data_, zero_perturber(), AttackDescriptor{});
  for (const MetricMap& m : r.tasks) {
    EXPECT_EQ(m.at("fooling_ratio"), 0.0);
    EXPECT_EQ(m.at("clean.accuracy"), m.at("adv.accuracy"));
  }
  EXPECT_EQ(family_->checksum(), before);
  const EvalReport moved = transfer_eval(zero_perturber(), *family_, *data_, AttackDescriptor{});
  for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(moved.tasks[t].at("adv.accuracy"), family_->models[t].clean_metrics.at("accuracy"));
}

TEST_F(EvalFixture, RatiosInRangeAndAveragesExact) {
  Rng rng(4);
  Perturber noisy = [&](std::size_t, const TaskBatch& b) { return random_tensor(rng, b.inputs.shape(), -0.3, 0.3); };
  AttackDescriptor d;
  d.goal = "targeted";
  d.targets = {1, 2, 3};
  const EvalReport r = evaluate_attack(*family_, *data_, noisy, d);
  for (const auto& [key, avg] : r.averages) {
    double total = 0.0;
    for (const MetricMap& m : r.tasks) total += m.at(key);
    EXPECT_NEAR(avg, total / 3.0, 1e-12) << key;
  }
  for (const MetricMap& m : r.tasks) {
    for (const char* k : {"fooling_ratio", "target_accuracy", "clean.accuracy", "adv.accuracy"}) {
      EXPECT_GE(m.at(k), 0.0);
      EXPECT_LE(m.at(k), 1.0);
    }
  }
}

TEST_F(EvalFixture, TransferNeedsAMatchingSuite) {
  const MultiTaskDataset other = split_train_test(make_shared_input_suite(1, SharedInputOptions{}), 0.2);
  EXPECT_THROW(transfer_eval(zero_perturber(), *family_, other, AttackDescriptor{}), ConfigError);
}

TEST_F(EvalFixture, CsvRoundTripAndMarkdownShape) {
  AttackDescriptor d;
  d.eps = 0.02;
  d.seed = 9;
  EvalReport mta = evaluate_attack(*family_, *data_, zero_perturber(), d);
  mta.parameters = 123;
  mta.timing["inference"] = 0.5;
  const std::string csv = report_to_csv(mta);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,goal,mode,eps,norm,family,seed,targets,task,kind,metric,value");
  const EvalReport back = report_from_csv(csv);
  EXPECT_EQ(report_to_csv(back), csv);
  EXPECT_EQ(back.tasks, mta.tasks);
  EXPECT_EQ(back.parameters, 123u);

  EvalReport gap = mta;
  gap.attack.method = "gap";
  const std::vector<EvalReport> both{mta, gap};
  std::istringstream md(reports_to_markdown(both));
  std::vector<std::string> lines;
  for (std::string line; std::getline(md, line);) lines.push_back(line);
  ASSERT_EQ(lines.size(), 5u);  // header, rule, clean, two methods
  EXPECT_EQ(lines[0], "| Method | task0 (accuracy) | task1 (accuracy) | task2 (accuracy) | Avg |");
  EXPECT_EQ(lines[2].rfind("| Clean |", 0), 0u);
  EXPECT_EQ(lines[3].rfind("| MTA ", 0), 0u);
  EXPECT_EQ(lines[4].rfind("| GAP ", 0), 0u);
  for (const std::string& l : lines) EXPECT_EQ(std::count(l.begin(), l.end(), '|'), 6);
}

TEST(ParameterCountTest, SharingArithmetic) {
  for (std::size_t tasks : {1, 3}) {
    GeneratorConfig c;
    c.tasks = tasks;
    const MultiTaskGenerator mta = MultiTaskGenerator::create(c);
    GeneratorConfig single = c;
    single.tasks = 1;
    std::vector<MultiTaskGenerator> gap;
    for (std::size_t t = 0; t < tasks; ++t) gap.push_back(MultiTaskGenerator::create(single));
    const std::size_t f = encoder_param_count(c), g = decoder_param_count(c);
    EXPECT_EQ(count_parameters(mta), f + tasks * g);
    EXPECT_EQ(count_parameters(std::span<const MultiTaskGenerator>(gap)), tasks * (f + g));
    if (tasks == 1) EXPECT_EQ(count_parameters(mta), count_parameters(std::span<const MultiTaskGenerator>(gap)));
    if (tasks == 3) EXPECT_LT(count_parameters(mta), count_parameters(std::span<const MultiTaskGenerator>(gap)));
  }
}

TEST(TimingTest, RepetitionFloorIsEnforced) {
  EXPECT_THROW(median_seconds([] {}, 29), ConfigError);
  std::size_t calls = 0;
  median_seconds([&] { ++calls; }, 30, 3);
  EXPECT_EQ(calls, 33u);
}

TEST(TimingTest, MedianIsStableAcrossConsecutiveMeasurements) {
  GeneratorConfig c;
  c.mode = PerturbMode::per_instance;
  c.input_shape = {3, 16, 16};
  const MultiTaskGenerator g = MultiTaskGenerator::create(c);
  Rng rng(1);
  const Tensor x = random_tensor(rng, {10, 3, 16, 16}, 0.0, 1.0);
  const double a = measure_inference_time(g, x, 30);
  const double b = measure_inference_time(g, x, 30);
  EXPECT_GT(a, 0.0);
  EXPECT_LE(std::abs(a - b), 0.2 * std::max(a, b));
}

}  // namespace
}  // namespace mta
