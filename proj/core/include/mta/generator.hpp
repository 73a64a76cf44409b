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

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mta/archive.hpp"
#include "mta/autograd.hpp"
#include "mta/nn.hpp"

namespace mta {

enum class NormKind { l2, linf };
enum class PerturbMode { universal, per_instance };

std::string_view to_string(NormKind p);
std::string_view to_string(PerturbMode m);
NormKind parse_norm(std::string_view s);  // "2" or "inf"
PerturbMode parse_mode(std::string_view s);

// The scaling map: raw * min(1, eps / ||raw||_p). With per_row set, each
// leading-axis slice is scaled by its own norm. At the ball boundary the
// gradient of the inside branch is used; a zero tensor maps to itself.
Var project_epsilon(const Var& raw, double eps, NormKind p, bool per_row = false);
Tensor project_epsilon(const Tensor& raw, double eps, NormKind p, bool per_row = false);

// ||v||_p over the whole tensor.
double norm_p(const Tensor& v, NormKind p);

// x + v, where v either matches x or has a leading axis of 1 that is
// broadcast over the batch. Optionally clipped to [lo, hi].
Tensor apply_perturbation(const Tensor& x, const Tensor& v,
                          std::optional<std::pair<double, double>> clamp_range = std::nullopt);
Var apply_perturbation(const Var& x, const Var& v, std::optional<std::pair<double, double>> clamp_range = std::nullopt);

struct GeneratorConfig {
  std::size_t tasks = 3;
  PerturbMode mode = PerturbMode::universal;
  double eps = 0.1;
  NormKind norm = NormKind::linf;
  std::size_t blocks = 2;   // residual blocks in the encoder
  std::size_t width1 = 8;   // after the first downsampling conv
  std::size_t width2 = 16;  // after the second, and through the residual blocks
  std::uint64_t seed = 0;
  Shape input_shape{1, 16, 16};
};

void validate(const GeneratorConfig& config);
nlohmann::json generator_config_to_json(const GeneratorConfig& config);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

std::vector<LayerSpec> generator_encoder_layers(const GeneratorConfig& config);
std::vector<LayerSpec> generator_decoder_layers(const GeneratorConfig& config);
// Sizes from the layer dimensions alone.
std::size_t encoder_param_count(const GeneratorConfig& config);
std::size_t decoder_param_count(const GeneratorConfig& config);

// Shared encoder f, one decoder g_t per task, and in universal mode one fixed
// uniform pattern Z_t per task.
class MultiTaskGenerator {
 public:
  static MultiTaskGenerator create(const GeneratorConfig& config);

  const GeneratorConfig& config() const { return config_; }
  std::size_t tasks() const { return decoders_.size(); }
  const std::vector<Tensor>& patterns() const { return patterns_; }

  // f(x). Counts calls.
  Var encode(const Var& x) const;
  // Pi(tanh(g_t(latent))).
  Var decode(std::size_t task, const Var& latent) const;

  // v_t = Pi(g_t(f(Z_t))), shape 1 x input_shape.
  Var universal(std::size_t task) const;
  // v_t^i = Pi(g_t(f(x))), one projection per instance.
  Var per_instance(std::size_t task, const Var& x) const;
  // One encoder pass decoded by every task.
  std::vector<Var> all_tasks(const Var& x) const;

  Tensor generate_universal(std::size_t task) const;
  Tensor generate_per_instance(std::size_t task, const Tensor& x) const;
  Tensor shared_encoding_path(const Tensor& x) const;
  Tensor decode_latent(std::size_t task, const Tensor& latent) const;

  std::vector<Var> encoder_parameters() const;
  std::vector<Var> decoder_parameters(std::size_t task) const;
  std::vector<Var> parameters() const;
  std::size_t num_params() const;
  std::uint64_t checksum() const;
  void set_trainable(bool on);

  std::size_t encoder_calls() const { return encoder_calls_->load(); }
  void reset_encoder_calls() const { encoder_calls_->store(0); }

  friend NamedTensorArchive generator_to_archive(const MultiTaskGenerator& g);
  friend MultiTaskGenerator generator_from_archive(const NamedTensorArchive& a);

 private:
  void check_input(const Var& x) const;
  void check_task(std::size_t task) const;

  GeneratorConfig config_;
  std::vector<Layer> encoder_;
  std::vector<std::vector<Layer>> decoders_;
  std::vector<Tensor> patterns_;
  std::shared_ptr<std::atomic<std::size_t>> encoder_calls_ = std::make_shared<std::atomic<std::size_t>>(0);
};

NamedTensorArchive generator_to_archive(const MultiTaskGenerator& g);
MultiTaskGenerator generator_from_archive(const NamedTensorArchive& a);
void save_generator(const MultiTaskGenerator& g, const std::filesystem::path& path);
MultiTaskGenerator load_generator(const std::filesystem::path& path);

struct PerturbationBundle {
  std::vector<Tensor> perturbations;  // one per task
  PerturbMode mode = PerturbMode::universal;
  double eps = 0.0;
  NormKind norm = NormKind::linf;
  std::uint64_t generator_checksum = 0;
  std::uint64_t seed = 0;
};

// Universal mode only.
PerturbationBundle make_bundle(const MultiTaskGenerator& g);
NamedTensorArchive bundle_to_archive(const PerturbationBundle& b);
PerturbationBundle bundle_from_archive(const NamedTensorArchive& a);

// Binary PGM (1 channel) or PPM (3 channels) of a C x H x W perturbation,
// mapping [-eps, eps] linearly onto [0, 255].
std::string encode_pnm(const Tensor& v, double eps);
void write_pnm(const std::filesystem::path& path, const Tensor& v, double eps);

}  // namespace mta
