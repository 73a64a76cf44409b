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

#include "mta/nn.hpp"

#include <cmath>
#include <string>
#include <unordered_set>

#include "mta/errors.hpp"

namespace mta {

Tensor he_normal(Rng& rng, Shape shape, std::size_t fan_in) {
  Tensor t(std::move(shape));
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : t.data()) v = sd * rng.normal();
  return t;
}

Conv2d Conv2d::create(Rng& rng, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                      std::size_t pad) {
  Conv2d c;
  c.weight = parameter(he_normal(rng, {out, in, kernel, kernel}, in * kernel * kernel));
  c.bias = parameter(Tensor::zeros({out}));
  c.stride = stride;
  c.pad = pad;
  return c;
}

Var Conv2d::operator()(const Var& x) const { return conv2d(x, weight, bias, {stride, pad}); }

Linear Linear::create(Rng& rng, std::size_t in, std::size_t out) {
  Linear l;
  l.weight = parameter(he_normal(rng, {in, out}, in));
  l.bias = parameter(Tensor::zeros({out}));
  return l;
}

Var Linear::operator()(const Var& x) const { return add(matmul(x, weight), bias); }

std::vector<Var> unique_params(const std::vector<Var>& params) {
  std::unordered_set<const Node*> seen;
  std::vector<Var> out;
  for (const Var& p : params) {
    if (seen.insert(p.node().get()).second) out.push_back(p);
  }
  return out;
}

std::size_t count_values(const std::vector<Var>& params) {
  std::size_t n = 0;
  for (const Var& p : unique_params(params)) n += p.size();
  return n;
}

namespace {

std::string_view layer_type_name(LayerType t) {
  switch (t) {
    case LayerType::conv: return "conv";
    case LayerType::linear: return "linear";
    case LayerType::flatten: return "flatten";
    case LayerType::upsample: return "upsample";
  }
  return "?";
}

}  // namespace

nlohmann::json layer_to_json(const LayerSpec& l) {
  return {{"type", layer_type_name(l.type)}, {"in", l.in},         {"out", l.out}, {"kernel", l.kernel},
          {"stride", l.stride},              {"pad", l.pad},       {"relu", l.relu}};
}

LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec l;
  const std::string type = j.at("type").get<std::string>();
  if (type == "conv") {
    l.type = LayerType::conv;
  } else if (type == "linear") {
    l.type = LayerType::linear;
  } else if (type == "flatten") {
    l.type = LayerType::flatten;
  } else if (type == "upsample") {
    l.type = LayerType::upsample;
  } else {
    throw FormatError("unknown layer type '" + type + "'");
  }
  l.in = j.at("in").get<std::size_t>();
  l.out = j.at("out").get<std::size_t>();
  l.kernel = j.at("kernel").get<std::size_t>();
  l.stride = j.at("stride").get<std::size_t>();
  l.pad = j.at("pad").get<std::size_t>();
  l.relu = j.at("relu").get<bool>();
  return l;
}

Layer make_layer(Rng& rng, const LayerSpec& spec) {
  Layer l{spec, Var(), Var()};
  if (spec.type == LayerType::conv) {
    Conv2d c = Conv2d::create(rng, spec.in, spec.out, spec.kernel, spec.stride, spec.pad);
    l.weight = c.weight;
    l.bias = c.bias;
  } else if (spec.type == LayerType::linear) {
    Linear lin = Linear::create(rng, spec.in, spec.out);
    l.weight = lin.weight;
    l.bias = lin.bias;
  }
  return l;
}

Var apply_layer(const Layer& layer, const Var& x) {
  const LayerSpec& s = layer.spec;
  Var y;
  switch (s.type) {
    case LayerType::conv: y = conv2d(x, layer.weight, layer.bias, {s.stride, s.pad}); break;
    case LayerType::linear: y = add(matmul(x, layer.weight), layer.bias); break;
    case LayerType::flatten: y = reshape(x, {x.shape()[0], x.size() / x.shape()[0]}); break;
    case LayerType::upsample: y = upsample2x_nearest(x); break;
  }
  return s.relu ? relu(y) : y;
}

Shape weight_shape(const LayerSpec& s) {
  return s.type == LayerType::conv ? Shape{s.out, s.in, s.kernel, s.kernel} : Shape{s.in, s.out};
}

}  // namespace mta
