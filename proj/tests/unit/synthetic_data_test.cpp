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
#include <map>

#include "mta/dataset.hpp"
#include "mta/errors.hpp"
#include "test_util.hpp"

namespace mta {
namespace {

using testing::same_tensor;
void expect_same_dataset(const MultiTaskDataset& a, const MultiTaskDataset& b) {
  ASSERT_EQ(a.tasks.size(), b.tasks.size());
  EXPECT_EQ(a.suite, b.suite);
  EXPECT_EQ(a.seed, b.seed);
  EXPECT_EQ(a.test_fraction, b.test_fraction);
  for (std::size_t t = 0; t < a.tasks.size(); ++t) {
    const TaskData& x = a.tasks[t];
    const TaskData& y = b.tasks[t];
    EXPECT_EQ(task_spec_to_json(x.spec), task_spec_to_json(y.spec));
    EXPECT_TRUE(same_tensor(*x.inputs, *y.inputs));
    EXPECT_EQ(x.labels, y.labels);
    EXPECT_TRUE(same_tensor(x.targets, y.targets));
    EXPECT_EQ(x.train, y.train);
    EXPECT_EQ(x.test, y.test);
  }
}

SharedLabelOptions small_label_options() {
  SharedLabelOptions o;
  o.classes = 5;
  o.n_per_task = 500;
  return o;
}

TEST(SharedLabelSuiteTest, BalancedConstruction) {
  const MultiTaskDataset ds = make_shared_label_suite(1, small_label_options());
  ASSERT_EQ(ds.tasks.size(), 3u);
  for (const TaskData& task : ds.tasks) {
    EXPECT_EQ(task.size(), 500u);
    EXPECT_EQ(task.inputs->shape(), (Shape{500, 1, 16, 16}));
    EXPECT_EQ(task.spec.num_classes, 5u);
    std::map<int, int> counts;
    for (int y : task.labels) ++counts[y];
    ASSERT_EQ(counts.size(), 5u);
    for (const auto& [label, count] : counts) {
      EXPECT_GE(label, 0);
      EXPECT_LT(label, 5);
      EXPECT_EQ(count, 100);
    }
  }
}

TEST(SharedLabelSuiteTest, SameSeedIsBitIdentical) {
  expect_same_dataset(make_shared_label_suite(7, small_label_options()),
                      make_shared_label_suite(7, small_label_options()));
}

TEST(SharedLabelSuiteTest, SingleTaskIsValid) {
  SharedLabelOptions o = small_label_options();
  o.tasks = 1;
  const MultiTaskDataset ds = make_shared_label_suite(1, o);
  ASSERT_EQ(ds.tasks.size(), 1u);
  EXPECT_EQ(ds.tasks[0].size(), 500u);
}

TEST(SharedLabelSuiteTest, RejectsInvalidSizes) {
  SharedLabelOptions o = small_label_options();
  o.classes = 1;
  EXPECT_THROW(make_shared_label_suite(1, o), ConfigError);
  o = small_label_options();
  o.n_per_task = 49;
  EXPECT_THROW(make_shared_label_suite(1, o), ConfigError);
  o = small_label_options();
  o.tasks = 0;
  EXPECT_THROW(make_shared_label_suite(1, o), ConfigError);
}

// Same class label, different input distribution per task.
TEST(SharedLabelSuiteTest, TasksDifferInInputsNotLabels) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const MultiTaskDataset ds = make_shared_label_suite(seed, small_label_options());
    for (std::size_t t = 1; t < ds.tasks.size(); ++t) {
      EXPECT_EQ(ds.tasks[t].spec.num_classes, ds.tasks[0].spec.num_classes);
      EXPECT_NE(ds.tasks[t].inputs, ds.tasks[0].inputs);
      EXPECT_FALSE(same_tensor(*ds.tasks[t].inputs, *ds.tasks[0].inputs));
    }
  }
}

// Nearest class mean on the train split, as a linear-separability oracle.
TEST(SharedLabelSuiteTest, NearestMeanSeparatesClasses) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const MultiTaskDataset ds = split_train_test(make_shared_label_suite(seed, SharedLabelOptions{}), 0.2);
    for (const TaskData& task : ds.tasks) {
      const std::size_t dim = task.inputs->size() / task.size();
      const std::size_t classes = task.spec.num_classes;
      std::vector<double> means(classes * dim, 0.0);
      std::vector<double> counts(classes, 0.0);
      for (std::size_t row : task.train) {
        const int y = task.labels[row];
        counts[y] += 1.0;
        for (std::size_t k = 0; k < dim; ++k) means[y * dim + k] += (*task.inputs)[row * dim + k];
      }
      for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t k = 0; k < dim; ++k) means[c * dim + k] /= counts[c];
      }
      std::size_t correct = 0;
      for (std::size_t row : task.test) {
        double best = INFINITY;
        int arg = -1;
        for (std::size_t c = 0; c < classes; ++c) {
          double d = 0.0;
          for (std::size_t k = 0; k < dim; ++k) {
            const double diff = (*task.inputs)[row * dim + k] - means[c * dim + k];
            d += diff * diff;
          }
          if (d < best) best = d, arg = static_cast<int>(c);
        }
        correct += arg == task.labels[row];
      }
      EXPECT_GE(static_cast<double>(correct) / static_cast<double>(task.test.size()), 0.95) << "seed " << seed;
    }
  }
}

TEST(SharedInputSuiteTest, ConstructionInvariants) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const MultiTaskDataset ds = make_shared_input_suite(seed, SharedInputOptions{});
    ASSERT_EQ(ds.tasks.size(), 3u);
    const TaskData& seg = ds.tasks[0];
    const TaskData& depth = ds.tasks[1];
    const TaskData& normal = ds.tasks[2];
    EXPECT_EQ(seg.spec.kind, TaskKind::dense_classification);
    EXPECT_EQ(depth.spec.kind, TaskKind::dense_regression);
    EXPECT_EQ(normal.spec.kind, TaskKind::dense_unit_vector);
    EXPECT_EQ(seg.inputs->shape(), (Shape{200, 3, 16, 16}));
    for (int y : seg.labels) {
      EXPECT_GE(y, 0);
      EXPECT_LT(y, 4);
    }
    for (double d : depth.targets.data()) EXPECT_GE(d, 0.0);
    const std::size_t pix = 16 * 16;
    for (std::size_t i = 0; i < normal.size(); ++i) {
      for (std::size_t p = 0; p < pix; ++p) {
        double sq = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = normal.targets[(i * 3 + c) * pix + p];
          sq += v * v;
        }
        EXPECT_NEAR(sq, 1.0, 1e-12);
      }
    }
    for (double v : seg.inputs->data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(SharedInputSuiteTest, TasksShareOneInputTensor) {
  const MultiTaskDataset ds = make_shared_input_suite(1, SharedInputOptions{});
  EXPECT_EQ(ds.tasks[0].inputs.get(), ds.tasks[1].inputs.get());
  EXPECT_EQ(ds.tasks[0].inputs.get(), ds.tasks[2].inputs.get());
}

TEST(SharedInputSuiteTest, EverySegmentClassIsCommon) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const MultiTaskDataset ds = make_shared_input_suite(seed, SharedInputOptions{});
    std::vector<double> hist(4, 0.0);
    for (int y : ds.tasks[0].labels) hist[y] += 1.0;
    for (double h : hist) EXPECT_GE(h / static_cast<double>(ds.tasks[0].labels.size()), 0.05) << "seed " << seed;
  }
}

TEST(SharedInputSuiteTest, RejectsInvalidSizes) {
  SharedInputOptions o;
  o.n = 49;
  EXPECT_THROW(make_shared_input_suite(1, o), ConfigError);
  o = SharedInputOptions{};
  o.resolution = 0;
  EXPECT_THROW(make_shared_input_suite(1, o), ConfigError);
}

TEST(SplitTest, CountsAndStratification) {
  const MultiTaskDataset ds = split_train_test(make_shared_label_suite(1, small_label_options()), 0.2);
  EXPECT_EQ(ds.test_fraction, 0.2);
  for (const TaskData& task : ds.tasks) {
    EXPECT_EQ(task.train.size(), 400u);
    EXPECT_EQ(task.test.size(), 100u);
    std::vector<std::size_t> all = task.train;
    all.insert(all.end(), task.test.begin(), task.test.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i) ASSERT_EQ(all[i], i);
    std::map<int, int> test_counts;
    for (std::size_t row : task.test) ++test_counts[task.labels[row]];
    for (const auto& [label, count] : test_counts) EXPECT_LE(std::abs(count - 20), 1) << "class " << label;
  }
}

TEST(SplitTest, UnevenClassesStayProportional) {
  SharedLabelOptions o = small_label_options();
  o.n_per_task = 503;
  const MultiTaskDataset ds = split_train_test(make_shared_label_suite(4, o), 0.3);
  for (const TaskData& task : ds.tasks) {
    std::map<int, double> total, test;
    for (int y : task.labels) total[y] += 1.0;
    for (std::size_t row : task.test) test[task.labels[row]] += 1.0;
    for (const auto& [label, n] : total) EXPECT_LE(std::abs(test[label] - 0.3 * n), 1.0);
  }
}

TEST(SplitTest, DeterministicAndRangeChecked) {
  const MultiTaskDataset raw = make_shared_input_suite(2, SharedInputOptions{});
  expect_same_dataset(split_train_test(raw, 0.25), split_train_test(raw, 0.25));
  EXPECT_THROW(split_train_test(raw, 0.0), ConfigError);
  EXPECT_THROW(split_train_test(raw, 1.0), ConfigError);
  EXPECT_THROW(split_train_test(raw, -0.5), ConfigError);
}

TEST(DatasetArchiveTest, RoundTripIsExact) {
  for (const MultiTaskDataset& ds : {split_train_test(make_shared_label_suite(3, small_label_options()), 0.2),
                                     split_train_test(make_shared_input_suite(3, SharedInputOptions{}), 0.2)}) {
    const std::string bytes = dataset_to_archive(ds).serialize();
    const MultiTaskDataset back = dataset_from_archive(NamedTensorArchive::parse(bytes));
    expect_same_dataset(ds, back);
    EXPECT_EQ(dataset_to_archive(back).serialize(), bytes);
  }
}

TEST(DatasetArchiveTest, SharedInputsSurviveReload) {
  const MultiTaskDataset ds = split_train_test(make_shared_input_suite(3, SharedInputOptions{}), 0.2);
  const MultiTaskDataset back = dataset_from_archive(NamedTensorArchive::parse(dataset_to_archive(ds).serialize()));
  EXPECT_EQ(back.tasks[0].inputs.get(), back.tasks[2].inputs.get());
}

TEST(DatasetArchiveTest, TruncatedFileIsAFormatError) {
  const std::string bytes = dataset_to_archive(make_shared_label_suite(1, small_label_options())).serialize();
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(dataset_from_archive(NamedTensorArchive::parse(std::string_view(bytes).substr(0, cut))), FormatError)
        << "cut at " << cut;
  }
}

TEST(DatasetArchiveTest, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "mta_dataset_test.nta";
  const MultiTaskDataset ds = split_train_test(make_shared_label_suite(5, small_label_options()), 0.2);
  save_dataset(ds, path);
  expect_same_dataset(ds, load_dataset(path));
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace mta
