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
#include <vector>

#include <nlohmann/json.hpp>

#include "mta/autograd.hpp"
#include "mta/rng.hpp"

namespace mta {

// Convolution layer with He-normal weights and zero bias.
struct Conv2d {
  Var weight;  // out x in x k x k
  Var bias;    // out
  std::size_t stride = 1;
  std::size_t pad = 0;

  static Conv2d create(Rng& rng, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                       std::size_t pad);
  Var operator()(const Var& x) const;
  std::size_t num_params() const { return weight.size() + bias.size(); }
};

struct Linear {
  Var weight;  // in x out
  Var bias;    // out

  static Linear create(Rng& rng, std::size_t in, std::size_t out);
  Var operator()(const Var& x) const;
  std::size_t num_params() const { return weight.size() + bias.size(); }
};

// Closed-form parameter counts used for accounting checks.
constexpr std::size_t conv_param_count(std::size_t in, std::size_t out, std::size_t k) { return out * in * k * k + out; }
constexpr std::size_t linear_param_count(std::size_t in, std::size_t out) { return in * out + out; }

// N(0, sqrt(2 / fan_in)) entries.
Tensor he_normal(Rng& rng, Shape shape, std::size_t fan_in);

// Parameters with duplicates (same node) removed, first occurrence kept.
std::vector<Var> unique_params(const std::vector<Var>& params);
std::size_t count_values(const std::vector<Var>& params);

enum class LayerType { conv, linear, flatten, upsample };

struct LayerSpec {
  LayerType type = LayerType::conv;
  std::size_t in = 0, out = 0;
  std::size_t kernel = 0, stride = 1, pad = 0;
  bool relu = false;

  bool has_params() const { return type == LayerType::conv || type == LayerType::linear; }
};

nlohmann::json layer_to_json(const LayerSpec& layer);
LayerSpec layer_from_json(const nlohmann::json& j);

struct Layer {
  LayerSpec spec;
  Var weight;
  Var bias;
};

Layer make_layer(Rng& rng, const LayerSpec& spec);
Var apply_layer(const Layer& layer, const Var& x);
Shape weight_shape(const LayerSpec& spec);

}  // namespace mta
