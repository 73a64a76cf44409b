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

#include <map>
#include <span>
#include <string>
#include <vector>

#include "mta/dataset.hpp"
#include "mta/tensor.hpp"

namespace mta {

using MetricMap = std::map<std::string, double>;

// Argmax over axis 1. N x C gives N labels; N x C x H x W gives N*H*W labels
// ordered sample-major then row-major. Ties resolve to the lowest index.
std::vector<int> argmax_labels(const Tensor& scores);

// Fraction of positions where a[i] == b[i].
double agreement(std::span<const int> a, std::span<const int> b);
// Fraction of positions equal to `target`.
double hit_ratio(std::span<const int> pred, int target);

// Per-image mIoU (classes absent from both maps excluded), averaged over images.
double mean_iou(std::span<const int> pred, std::span<const int> truth, std::size_t classes, std::size_t pixels);

// Segmentation: miou, pix_acc. Depth: abs_err, rel_err. Normals: angle_mean,
// angle_median, within_11.25, within_22.5, within_30. Ratios are fractions.
// `prediction` is the model output (probabilities, depth, or normals).
MetricMap dense_metrics(TaskKind kind, const Tensor& prediction, std::span<const int> labels, const Tensor& targets,
                        std::size_t classes = 0);

// Per-pixel angle in degrees between two N x 3 x H x W fields, which are
// normalised here before the dot product.
std::vector<double> angle_degrees(const Tensor& a, const Tensor& b);

}  // namespace mta
