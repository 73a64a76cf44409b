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

#include "mta/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mta/errors.hpp"

namespace mta {

std::vector<int> argmax_labels(const Tensor& scores) {
  if (scores.rank() < 2) throw ShapeError("argmax_labels: expected N x C[...], got " + shape_str(scores.shape()));
  const std::size_t n = scores.dim(0), c = scores.dim(1);
  const std::size_t inner = scores.size() / (n * c);
  std::vector<int> out(n * inner);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < inner; ++p) {
      std::size_t best = 0;
      double best_v = scores[(i * c) * inner + p];
      for (std::size_t k = 1; k < c; ++k) {
        const double v = scores[(i * c + k) * inner + p];
        if (v > best_v) {
          best_v = v;
          best = k;
        }
      }
      out[i * inner + p] = static_cast<int>(best);
    }
  }
  return out;
}

double agreement(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size() || a.empty()) {
    throw ShapeError("agreement: misaligned label arrays (" + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + ")");
  }
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
  return static_cast<double>(same) / static_cast<double>(a.size());
}

double hit_ratio(std::span<const int> pred, int target) {
  if (pred.empty()) throw ShapeError("hit_ratio: empty prediction");
  return static_cast<double>(std::count(pred.begin(), pred.end(), target)) / static_cast<double>(pred.size());
}

double mean_iou(std::span<const int> pred, std::span<const int> truth, std::size_t classes, std::size_t pixels) {
  if (pred.size() != truth.size() || pixels == 0 || pred.size() % pixels != 0) {
    throw ShapeError("mean_iou: misaligned segmentation maps");
  }
  const std::size_t images = pred.size() / pixels;
  double total = 0.0;
  for (std::size_t i = 0; i < images; ++i) {
    std::vector<std::size_t> inter(classes, 0), uni(classes, 0);
    for (std::size_t p = i * pixels; p < (i + 1) * pixels; ++p) {
      const auto a = static_cast<std::size_t>(pred[p]), b = static_cast<std::size_t>(truth[p]);
      if (a == b) {
        ++inter[a];
        ++uni[a];
      } else {
        ++uni[a];
        ++uni[b];
      }
    }
    double s = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      if (uni[c] == 0) continue;
      s += static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
      ++present;
    }
    total += s / static_cast<double>(present);
  }
  return total / static_cast<double>(images);
}

std::vector<double> angle_degrees(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() != 4 || a.dim(1) != 3) {
    throw ShapeError("angle_degrees: expected matching N x 3 x H x W fields, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), pix = a.dim(2) * a.dim(3);
  std::vector<double> out(n * pix);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < pix; ++p) {
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double x = a[(i * 3 + c) * pix + p], y = b[(i * 3 + c) * pix + p];
        dot += x * y;
        na += x * x;
        nb += y * y;
      }
      const double denom = std::sqrt(na) * std::sqrt(nb);
      const double cosv = denom > 0.0 ? std::clamp(dot / denom, -1.0, 1.0) : 1.0;
      out[i * pix + p] = std::acos(cosv) * 180.0 / std::numbers::pi;
    }
  }
  return out;
}

MetricMap dense_metrics(TaskKind kind, const Tensor& prediction, std::span<const int> labels, const Tensor& targets,
                        std::size_t classes) {
  MetricMap m;
  switch (kind) {
    case TaskKind::dense_classification: {
      if (prediction.rank() != 4) throw ShapeError("dense_metrics: segmentation expects N x C x H x W");
      const std::vector<int> pred = argmax_labels(prediction);
      if (pred.size() != labels.size()) throw ShapeError("dense_metrics: label count mismatch");
      m["pix_acc"] = agreement(pred, labels);
      m["miou"] = mean_iou(pred, labels, classes ? classes : prediction.dim(1), prediction.dim(2) * prediction.dim(3));
      return m;
    }
    case TaskKind::dense_regression: {
      if (prediction.shape() != targets.shape()) {
        throw ShapeError("dense_metrics: depth " + shape_str(prediction.shape()) + " vs " + shape_str(targets.shape()));
      }
      double abs_err = 0.0, rel_err = 0.0;
      for (std::size_t i = 0; i < prediction.size(); ++i) {
        const double e = std::abs(prediction[i] - targets[i]);
        abs_err += e;
        rel_err += e / std::max(targets[i], 1e-6);
      }
      m["abs_err"] = abs_err / static_cast<double>(prediction.size());
      m["rel_err"] = rel_err / static_cast<double>(prediction.size());
      return m;
    }
    case TaskKind::dense_unit_vector: {
      std::vector<double> ang = angle_degrees(prediction, targets);
      double total = 0.0;
      std::size_t w1 = 0, w2 = 0, w3 = 0;
      for (double a : ang) {
        total += a;
        w1 += a <= 11.25;
        w2 += a <= 22.5;
        w3 += a <= 30.0;
      }
      const double n = static_cast<double>(ang.size());
      m["angle_mean"] = total / n;
      std::sort(ang.begin(), ang.end());
      const std::size_t mid = ang.size() / 2;
      m["angle_median"] = ang.size() % 2 ? ang[mid] : 0.5 * (ang[mid - 1] + ang[mid]);
      m["within_11.25"] = static_cast<double>(w1) / n;
      m["within_22.5"] = static_cast<double>(w2) / n;
      m["within_30"] = static_cast<double>(w3) / n;
      return m;
    }
    case TaskKind::classification: break;
  }
  throw ShapeError("dense_metrics: task kind '" + std::string(to_string(kind)) + "' is not dense");
}

}  // namespace mta
