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

#include <cmath>
#include <numbers>
#include <numeric>

#include "mta/attack.hpp"
#include "mta/errors.hpp"
#include "mta/evaluation.hpp"
#include "test_util.hpp"

namespace mta {
namespace {

using testing::gradient_error;
using testing::random_tensor;
using testing::same_tensor;

const double kE = std::numbers::e;

Var losses(std::vector<double> values) {
  const std::size_t n = values.size();
  return constant(Tensor({n}, std::move(values)));
}

// A victim whose weights are all zero outputs its last bias everywhere.
VictimModel constant_victim(TaskSpec spec, std::vector<double> last_bias = {}) {
  VictimModel m = build_victim(spec, {}, 1);
  for (Layer& l : m.layers) {
    if (!l.spec.has_params()) continue;
    for (double& w : l.weight.mutable_value().data()) w = 0.0;
    for (double& b : l.bias.mutable_value().data()) b = 0.0;
  }
  if (!last_bias.empty()) m.layers.back().bias.mutable_value() = Tensor({last_bias.size()}, last_bias);
  m.freeze();
  return m;
}

TaskSpec classification_spec(std::size_t classes) {
  TaskSpec s;
  s.kind = TaskKind::classification;
  s.num_classes = classes;
  s.input_shape = {1, 16, 16};
  return s;
}

TaskSpec dense_spec(TaskKind kind, std::size_t classes = 0) {
  TaskSpec s;
  s.kind = kind;
  s.num_classes = classes;
  s.input_shape = {3, 8, 8};
  return s;
}

TEST(FoolingLossTest, NonTargetedExamples) {
  EXPECT_DOUBLE_EQ(nontargeted_fooling(losses({1, 1, 1})).value().item(), 0.0);
  EXPECT_NEAR(nontargeted_fooling(losses({1, kE})).value().item(), -0.5, 1e-15);
  const Var x = constant(Tensor({1, 1, 16, 16}, 0.5));
  const std::vector<int> label{0};
  EXPECT_NEAR(loss_nontargeted_classification(constant_victim(classification_spec(2)), x, label).value().item(),
              -std::log(std::log(2.0)), 1e-12);
  EXPECT_NEAR(-std::log(std::log(2.0)), 0.366513, 1e-6);
}

TEST(FoolingLossTest, TargetedExamples) {
  EXPECT_DOUBLE_EQ(targeted_fooling(losses({1, 1})).value().item(), 0.0);
  EXPECT_NEAR(targeted_fooling(losses({kE})).value().item(), 1.0, 1e-15);
  std::vector<double> bias(5, 0.0);
  bias[3] = 1000.0;  // softmax is exactly one-hot on class 3
  const VictimModel sure = constant_victim(classification_spec(5), bias);
  const Var x = constant(Tensor({2, 1, 16, 16}, 0.2));
  EXPECT_NEAR(loss_targeted_classification(sure, x, 3).value().item(), std::log(1e-12), 1e-12);
  EXPECT_NEAR(std::log(1e-12), -27.631, 1e-3);
  EXPECT_THROW(loss_targeted_classification(sure, x, 5), ConfigError);
  EXPECT_THROW(loss_targeted_classification(sure, x, -1), ConfigError);
}

TEST(FoolingLossTest, DenseExamples) {
  const Var x = constant(Tensor({2, 3, 8, 8}, 0.5));
  TaskBatch batch;
  batch.inputs = x.value();

  const VictimModel depth = constant_victim(dense_spec(TaskKind::dense_regression), {0.7});
  batch.targets = Tensor({2, 1, 8, 8}, 0.7);
  EXPECT_NEAR(loss_nontargeted_dense(depth, x, batch).value().item(), -std::log(1e-12), 1e-9);

  const VictimModel normals = constant_victim(dense_spec(TaskKind::dense_unit_vector), {0, 0, 2});
  batch.targets = Tensor({2, 3, 8, 8}, 0.0);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t p = 0; p < 64; ++p) batch.targets[(i * 3 + 2) * 64 + p] = 1.0;
  }
  EXPECT_NEAR(loss_nontargeted_dense(normals, x, batch).value().item(), -std::log(1e-12), 1e-9);

  const VictimModel seg = constant_victim(dense_spec(TaskKind::dense_classification, 4));
  batch.labels.assign(2 * 64, 2);
  EXPECT_NEAR(loss_nontargeted_dense(seg, x, batch).value().item(), -std::log(std::log(4.0)), 1e-12);
  EXPECT_NEAR(-std::log(std::log(4.0)), -0.326634, 1e-6);

  EXPECT_THROW(loss_nontargeted_dense(constant_victim(classification_spec(2)), constant(Tensor({1, 1, 16, 16})),
                                      batch),
               ConfigError);
}

TEST(FoolingLossTest, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor h = random_tensor(rng, {6}, 0.1, 3.0);
    EXPECT_LT(gradient_error([](const std::vector<Var>& v) { return nontargeted_fooling(v[0]); }, {h}), 1e-4);
    EXPECT_LT(gradient_error([](const std::vector<Var>& v) { return targeted_fooling(v[0]); }, {h}), 1e-4);
  }
}

TEST(FoolingLossTest, MonotoneInEachSampleLoss) {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> h(4);
    for (double& v : h) v = rng.uniform(1e-3, 5.0);
    const std::size_t k = rng.next_u64() % 4;
    std::vector<double> bigger = h;
    bigger[k] += rng.uniform(1e-3, 2.0);
    EXPECT_LT(nontargeted_fooling(losses(bigger)).value().item(), nontargeted_fooling(losses(h)).value().item());
    EXPECT_GT(targeted_fooling(losses(bigger)).value().item(), targeted_fooling(losses(h)).value().item());
  }
}

TEST(FoolingLossTest, LogCompressesLossGaps) {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const double c2 = rng.uniform(1.0, 20.0);
    const double c1 = c2 + rng.uniform(1e-6, 50.0);
    EXPECT_LE(std::abs(std::log(c1) - std::log(c2)), std::abs(c1 - c2));
  }
}

TEST(ObjectiveTest, Examples) {
  const std::vector<double> half{0.5, 0.5};
  const std::vector<Var> pair{losses({0.2}), losses({0.4})};
  EXPECT_NEAR(sum(multi_task_objective(pair, half)).value().item(), 0.3, 1e-15);
  const std::vector<Var> zeros{losses({0}), losses({0})};
  EXPECT_EQ(sum(multi_task_objective(zeros, half)).value().item(), 0.0);
  const std::vector<Var> three{losses({1}), losses({2}), losses({3})};
  const std::vector<double> w{0.2, 0.3, 0.5};
  EXPECT_NEAR(sum(multi_task_objective(three, w)).value().item(), 0.2 * 1 + 0.3 * 2 + 0.5 * 3, 1e-15);
  EXPECT_THROW(multi_task_objective(three, half), ShapeError);
}

TEST(ObjectiveTest, LinearInLossesAndWeights) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(3), b(3), w(3), u(3);
    for (std::size_t t = 0; t < 3; ++t) a[t] = rng.normal(), b[t] = rng.normal(), w[t] = rng.uniform(), u[t] = rng.uniform();
    const double s = rng.normal();
    auto eval = [](const std::vector<double>& l, const std::vector<double>& weights) {
      std::vector<Var> vars;
      for (double x : l) vars.push_back(losses({x}));
      return sum(multi_task_objective(vars, weights)).value().item();
    };
    std::vector<double> combo(3), wsum(3);
    for (std::size_t t = 0; t < 3; ++t) combo[t] = a[t] + s * b[t], wsum[t] = w[t] + u[t];
    EXPECT_NEAR(eval(combo, w), eval(a, w) + s * eval(b, w), 1e-12);
    EXPECT_NEAR(eval(a, wsum), eval(a, w) + eval(a, u), 1e-12);
  }
}

TEST(AttackConfigTest, WeightsAndTargetsAreValidated) {
  AttackConfig c;
  EXPECT_EQ(resolved_weights(c, 4), std::vector<double>(4, 0.25));
  c.weights = {0.5, 0.6};
  try {
    validate(c, 2);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("weights must sum to 1"), std::string::npos);
  }
  c.weights = {0.5, 0.5, 0.0};
  EXPECT_THROW(validate(c, 3), ConfigError);
  c.weights = {0.25, 0.75};
  EXPECT_NO_THROW(validate(c, 2));
  EXPECT_THROW(validate(c, 3), ConfigError);

  AttackConfig t;
  t.goal = AttackGoal::targeted;
  EXPECT_THROW(validate(t, 3), ConfigError);
  t.targets = {1, 2, 3};
  EXPECT_NO_THROW(validate(t, 3));
  AttackConfig n;
  n.targets = {1, 2, 3};
  EXPECT_THROW(validate(n, 3), ConfigError);
}

TEST(AttackConfigTest, JsonRoundTrip) {
  AttackConfig c;
  c.goal = AttackGoal::targeted;
  c.targets = {4, 0, 2};
  c.weights = {0.2, 0.3, 0.5};
  c.eps = 0.04;
  c.norm = NormKind::l2;
  EXPECT_EQ(attack_config_to_json(attack_config_from_json(attack_config_to_json(c))), attack_config_to_json(c));
}

TEST(FgsmTest, SignStep) {
  const Tensor v = signed_step(Tensor({2}, std::vector<double>{0.1, -3}), 2.0);
  EXPECT_EQ(v[0], 2.0);
  EXPECT_EQ(v[1], -2.0);
  EXPECT_TRUE(same_tensor(signed_step(Tensor({3}, 0.0), 2.0), Tensor({3}, 0.0)));
}

TEST(FgsmTest, ZeroGradientGivesZeroPerturbation) {
  TaskBatch batch;
  batch.inputs = Tensor({2, 1, 16, 16}, 0.3);
  batch.labels = {0, 1};
  const Tensor v = fgsm_perturb(constant_victim(classification_spec(3)), batch, 0.1);
  for (double x : v.data()) EXPECT_EQ(x, 0.0);
}

TEST(FgsmTest, FollowsTheInputGradientAndIsAFixedPoint) {
  TaskSpec spec = classification_spec(4);
  VictimModel victim = build_victim(spec, {}, 3);
  victim.freeze();
  Rng rng(9);
  TaskBatch batch;
  batch.inputs = random_tensor(rng, {3, 1, 16, 16}, 0.0, 1.0);
  batch.labels = {0, 3, 1};
  const Tensor v = fgsm_perturb(victim, batch, 0.05);

  Var x = parameter(batch.inputs);
  backward(sum(cross_entropy_per_sample(victim.forward(x), one_hot(batch.labels, 4))));
  bool all_nonzero = true;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double g = x.grad()[i];
    all_nonzero = all_nonzero && g != 0.0;
    EXPECT_EQ(v[i], g > 0 ? 0.05 : (g < 0 ? -0.05 : 0.0));
  }
  if (all_nonzero) EXPECT_EQ(norm_p(v, NormKind::linf), 0.05);
  EXPECT_TRUE(same_tensor(project_epsilon(v, 0.05, NormKind::linf), v));
}

// Competent victims on a small shared-label suite, trained once.
class ToyAttackTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    SharedLabelOptions o;
    o.classes = 5;
    o.n_per_task = 200;
    data_ = new MultiTaskDataset(split_train_test(make_shared_label_suite(2, o), 0.2));
    VictimTrainOptions vo;
    vo.seed = 2;
    vo.epochs = 20;
    victims_ = new VictimFamily(train_independent_family(*data_, {}, vo));
  }
  static void TearDownTestSuite() {
    delete data_;
    delete victims_;
  }
  static AttackConfig config(std::uint64_t seed) {
    AttackConfig c;
    c.seed = seed;
    c.epochs = 15;
    c.probe = 20;
    return c;
  }
  static MultiTaskDataset* data_;
  static VictimFamily* victims_;
};
MultiTaskDataset* ToyAttackTest::data_ = nullptr;
VictimFamily* ToyAttackTest::victims_ = nullptr;

TEST_F(ToyAttackTest, VictimsAreCompetent) {
  for (const VictimModel& m : victims_->models) EXPECT_GE(m.clean_metrics.at("accuracy"), 0.9);
}

TEST_F(ToyAttackTest, MtaObjectiveFallsAndVictimsStayFrozen) {
  const std::uint64_t before = victims_->checksum();
  for (std::uint64_t seed : {1, 2, 3}) {
    const AttackConfig c = config(seed);
    MultiTaskGenerator g = MultiTaskGenerator::create(generator_config(c, 3, {1, 16, 16}, seed));
    const TrainingLog log = train_mta(g, *victims_, *data_, c);
    ASSERT_EQ(log.epochs(), c.epochs);
    ASSERT_EQ(log.task_loss.size(), c.epochs);
    ASSERT_EQ(log.probe_fooling.size(), c.epochs);
    ASSERT_EQ(log.seconds.size(), c.epochs);
    for (std::size_t e = 0; e < c.epochs; ++e) {
      EXPECT_TRUE(std::isfinite(log.total[e]));
      for (double l : log.task_loss[e]) EXPECT_TRUE(std::isfinite(l));
      for (double f : log.probe_fooling[e]) EXPECT_TRUE(f >= 0.0 && f <= 1.0);
    }
    std::vector<double> windows;
    for (std::size_t e = 0; e + 5 <= c.epochs; e += 5) {
      windows.push_back(std::accumulate(log.total.begin() + e, log.total.begin() + e + 5, 0.0) / 5.0);
    }
    for (std::size_t w = 1; w < windows.size(); ++w) EXPECT_LE(windows[w], windows[w - 1]) << "seed " << seed;
    EXPECT_EQ(victims_->checksum(), before);
    // Each decoder specialises to its own task.
    const Tensor v0 = g.generate_universal(0), v1 = g.generate_universal(1), v2 = g.generate_universal(2);
    EXPECT_FALSE(same_tensor(v0, v1));
    EXPECT_FALSE(same_tensor(v1, v2));
    EXPECT_FALSE(same_tensor(v0, v2));
  }
}

TEST_F(ToyAttackTest, TrainingIsDeterministic) {
  const AttackConfig c = config(4);
  MultiTaskGenerator a = MultiTaskGenerator::create(generator_config(c, 3, {1, 16, 16}, 4));
  MultiTaskGenerator b = MultiTaskGenerator::create(generator_config(c, 3, {1, 16, 16}, 4));
  const TrainingLog la = train_mta(a, *victims_, *data_, c);
  const TrainingLog lb = train_mta(b, *victims_, *data_, c);
  EXPECT_EQ(a.checksum(), b.checksum());
  EXPECT_EQ(la.total, lb.total);
}

TEST_F(ToyAttackTest, UnfrozenVictimsAreRejected) {
  VictimFamily live = *victims_;
  VictimModel copy = build_victim(live.models[0].task, {}, 1);
  live.models[0] = copy;
  const AttackConfig c = config(1);
  MultiTaskGenerator g = MultiTaskGenerator::create(generator_config(c, 3, {1, 16, 16}, 1));
  EXPECT_THROW(train_mta(g, live, *data_, c), ConfigError);
}

TEST_F(ToyAttackTest, PerInstanceRespondsToTheInput) {
  AttackConfig c = config(5);
  c.mode = PerturbMode::per_instance;
  MultiTaskGenerator g = MultiTaskGenerator::create(generator_config(c, 3, {1, 16, 16}, 5));
  train_mta(g, *victims_, *data_, c);
  const TaskData& task = data_->tasks[0];
  // Two test rows with different labels look different.
  std::size_t a = task.test[0], b = task.test[1];
  for (std::size_t row : task.test) {
    if (task.labels[row] != task.labels[a]) {
      b = row;
      break;
    }
  }
  const std::vector<std::size_t> rows{a, b};
  const Tensor v = g.generate_per_instance(0, batch_inputs(task, rows));
  const std::size_t dim = 256;
  EXPECT_FALSE(std::equal(v.data().begin(), v.data().begin() + dim, v.data().begin() + dim));
}

TEST_F(ToyAttackTest, GapTrainsOneGeneratorPerTask) {
  const AttackConfig c = config(6);
  const GapResult gap = train_gap_baseline(*data_, *victims_, c);
  ASSERT_EQ(gap.generators.size(), 3u);
  ASSERT_EQ(gap.logs.size(), 3u);
  const GeneratorConfig single = generator_config(c, 1, {1, 16, 16}, 0);
  const std::size_t encoder = encoder_param_count(single), decoder = decoder_param_count(single);
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(gap.generators[t].tasks(), 1u);
    EXPECT_EQ(gap.logs[t].task_loss.front().size(), 1u);
    EXPECT_LT(gap.logs[t].total.back(), gap.logs[t].total.front());
  }
  const std::size_t mta = encoder + 3 * decoder;
  EXPECT_EQ(count_parameters(std::span<const MultiTaskGenerator>(gap.generators)), 3 * (encoder + decoder));
  EXPECT_GT(3 * (encoder + decoder), mta);
}

TEST_F(ToyAttackTest, UntrainedTargetAccuracyIsNearChance) {
  for (std::uint64_t seed : {1, 2, 3}) {
    AttackConfig c = config(seed);
    const MultiTaskGenerator g = MultiTaskGenerator::create(generator_config(c, 3, {1, 16, 16}, seed));
    double avg = 0.0;
    for (std::size_t t = 0; t < 3; ++t) {
      const TaskData& task = data_->tasks[t];
      const Tensor x = apply_perturbation(batch_inputs(task, task.test), g.generate_universal(t));
      for (int target = 0; target < 5; ++target) avg += top1_target_accuracy(victims_->models[t], x, target);
    }
    EXPECT_NEAR(avg / 15.0, 0.2, 0.05) << "seed " << seed;
  }
}

TEST_F(ToyAttackTest, TargetedTrainingHitsTheTarget) {
  AttackConfig c = config(7);
  c.goal = AttackGoal::targeted;
  c.targets = {1, 4, 2};
  MultiTaskGenerator g = MultiTaskGenerator::create(generator_config(c, 3, {1, 16, 16}, 7));
  train_mta(g, *victims_, *data_, c);
  for (std::size_t t = 0; t < 3; ++t) {
    const TaskData& task = data_->tasks[t];
    const Tensor x = apply_perturbation(batch_inputs(task, task.test), g.generate_universal(t));
    EXPECT_GT(top1_target_accuracy(victims_->models[t], x, c.targets[t]), 0.5);
  }
}

TEST_F(ToyAttackTest, ArtifactRoundTripIsExact) {
  for (AttackMethod method : {AttackMethod::mta, AttackMethod::gap}) {
    AttackConfig c = config(8);
    c.epochs = 1;
    const AttackArtifact a = train_attack(method, *data_, *victims_, c);
    const std::string bytes = attack_to_archive(a).serialize();
    const AttackArtifact back = attack_from_archive(NamedTensorArchive::parse(bytes));
    EXPECT_EQ(attack_to_archive(back).serialize(), bytes);
    EXPECT_EQ(count_parameters(back), count_parameters(a));
  }
}

}  // namespace
}  // namespace mta
