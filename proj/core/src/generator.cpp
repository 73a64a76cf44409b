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

#include "mta/generator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <tuple>

#include "mta/errors.hpp"
#include "mta/rng.hpp"

namespace mta {

std::string_view to_string(NormKind p) { return p == NormKind::l2 ? "2" : "inf"; }

std::string_view to_string(PerturbMode m) { return m == PerturbMode::universal ? "universal" : "per_instance"; }

NormKind parse_norm(std::string_view s) {
  if (s == "2" || s == "l2") return NormKind::l2;
  if (s == "inf" || s == "linf") return NormKind::linf;
  throw ConfigError("unknown norm '" + std::string(s) + "' (expected 2 or inf)");
}

PerturbMode parse_mode(std::string_view s) {
  if (s == "universal") return PerturbMode::universal;
  if (s == "per_instance") return PerturbMode::per_instance;
  throw ConfigError("unknown mode '" + std::string(s) + "' (expected universal or per_instance)");
}

Var project_epsilon(const Var& raw, double eps, NormKind p, bool per_row) {
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  Var norm;
  if (p == NormKind::linf) {
    norm = clamp_min(max_abs(raw, per_row), eps);
  } else if (per_row) {
    Shape s(raw.shape().size(), 1);
    s[0] = raw.shape()[0];
    norm = sqrt(clamp_min(reshape(sum_rows(mul(raw, raw)), s), eps * eps));
  } else {
    norm = sqrt(clamp_min(sum(mul(raw, raw)), eps * eps));
  }
  return mul(raw, div(constant(Tensor::scalar(eps)), norm));
}

Tensor project_epsilon(const Tensor& raw, double eps, NormKind p, bool per_row) {
  return project_epsilon(constant(raw), eps, p, per_row).value();
}

double norm_p(const Tensor& v, NormKind p) {
  double acc = 0.0;
  for (double x : v.values()) acc = p == NormKind::linf ? std::max(acc, std::abs(x)) : acc + x * x;
  return p == NormKind::linf ? acc : std::sqrt(acc);
}

namespace {

void check_broadcast(const Shape& x, const Shape& v) {
  if (x == v) return;
  if (x.size() == v.size() && !v.empty() && v[0] == 1 && std::equal(x.begin() + 1, x.end(), v.begin() + 1)) return;
  throw ShapeError("perturbation " + shape_str(v) + " does not fit input " + shape_str(x));
}

}  // namespace

Tensor apply_perturbation(const Tensor& x, const Tensor& v, std::optional<std::pair<double, double>> clamp_range) {
  return apply_perturbation(constant(x), constant(v), clamp_range).value();
}

Var apply_perturbation(const Var& x, const Var& v, std::optional<std::pair<double, double>> clamp_range) {
  check_broadcast(x.shape(), v.shape());
  Var out = add(x, v);
  if (clamp_range) {
    const auto [lo, hi] = *clamp_range;
    if (lo > hi) throw ConfigError("clamp range is empty");
    out = neg(clamp_min(neg(clamp_min(out, lo)), -hi));
  }
  return out;
}

void validate(const GeneratorConfig& c) {
  if (c.tasks == 0) throw ConfigError("generator: tasks must be at least 1");
  if (c.blocks == 0) throw ConfigError("generator: blocks must be at least 1");
  if (!(c.eps > 0.0) || !std::isfinite(c.eps)) throw ConfigError("generator: eps must be positive");
  if (c.width1 == 0 || c.width2 == 0) throw ConfigError("generator: widths must be positive");
  if (c.input_shape.size() != 3 || c.input_shape[1] % 4 != 0 || c.input_shape[2] % 4 != 0 ||
      c.input_shape[0] == 0) {
    throw ConfigError("generator: input shape must be C x H x W with H and W multiples of 4");
  }
}

nlohmann::json generator_config_to_json(const GeneratorConfig& c) {
  return {{"tasks", c.tasks},   {"mode", to_string(c.mode)}, {"eps", c.eps},       {"norm", to_string(c.norm)},
          {"blocks", c.blocks}, {"width1", c.width1},        {"width2", c.width2}, {"seed", c.seed},
          {"input_shape", c.input_shape}};
}

GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.tasks = j.at("tasks").get<std::size_t>();
  c.mode = parse_mode(j.at("mode").get<std::string>());
  c.eps = j.at("eps").get<double>();
  c.norm = parse_norm(j.at("norm").get<std::string>());
  c.blocks = j.at("blocks").get<std::size_t>();
  c.width1 = j.at("width1").get<std::size_t>();
  c.width2 = j.at("width2").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.input_shape = j.at("input_shape").get<Shape>();
  return c;
}

std::vector<LayerSpec> generator_encoder_layers(const GeneratorConfig& c) {
  const std::size_t in = c.input_shape.at(0);
  std::vector<LayerSpec> layers{{LayerType::conv, in, c.width1, 3, 2, 1, true},
                                {LayerType::conv, c.width1, c.width2, 3, 2, 1, true}};
  for (std::size_t b = 0; b < c.blocks; ++b) {
    layers.push_back({LayerType::conv, c.width2, c.width2, 3, 1, 1, true});
    layers.push_back({LayerType::conv, c.width2, c.width2, 3, 1, 1, false});
  }
  return layers;
}

std::vector<LayerSpec> generator_decoder_layers(const GeneratorConfig& c) {
  return {{LayerType::upsample},
          {LayerType::conv, c.width2, c.width1, 3, 1, 1, true},
          {LayerType::upsample},
          {LayerType::conv, c.width1, c.input_shape.at(0), 3, 1, 1, false}};
}

namespace {

std::size_t count_layers(const std::vector<LayerSpec>& layers) {
  std::size_t n = 0;
  for (const LayerSpec& l : layers) {
    if (l.type == LayerType::conv) n += conv_param_count(l.in, l.out, l.kernel);
  }
  return n;
}

}  // namespace

std::size_t encoder_param_count(const GeneratorConfig& c) { return count_layers(generator_encoder_layers(c)); }

std::size_t decoder_param_count(const GeneratorConfig& c) { return count_layers(generator_decoder_layers(c)); }

MultiTaskGenerator MultiTaskGenerator::create(const GeneratorConfig& config) {
  validate(config);
  MultiTaskGenerator g;
  g.config_ = config;
  Rng root = Rng(config.seed).split("generator");
  Rng enc = root.split("encoder");
  for (const LayerSpec& s : generator_encoder_layers(config)) g.encoder_.push_back(make_layer(enc, s));
  for (std::size_t t = 0; t < config.tasks; ++t) {
    Rng dec = root.split("decoder").split(t);
    std::vector<Layer> layers;
    for (const LayerSpec& s : generator_decoder_layers(config)) layers.push_back(make_layer(dec, s));
    g.decoders_.push_back(std::move(layers));
    if (config.mode == PerturbMode::universal) {
      Rng pat = root.split("pattern").split(t);
      Shape shape{1};
      shape.insert(shape.end(), config.input_shape.begin(), config.input_shape.end());
      Tensor z = Tensor::zeros(shape);
      for (double& v : z.data()) v = pat.uniform();
      g.patterns_.push_back(std::move(z));
    }
  }
  g.set_trainable(true);
  return g;
}

void MultiTaskGenerator::check_input(const Var& x) const {
  const Shape& s = x.shape();
  if (s.size() != 4 || !std::equal(s.begin() + 1, s.end(), config_.input_shape.begin())) {
    throw ShapeError("generator: input " + shape_str(s) + " does not match N x " + shape_str(config_.input_shape));
  }
}

void MultiTaskGenerator::check_task(std::size_t task) const {
  if (task >= decoders_.size()) {
    throw ConfigError("generator: task " + std::to_string(task) + " out of range (" +
                      std::to_string(decoders_.size()) + " decoders)");
  }
}

Var MultiTaskGenerator::encode(const Var& x) const {
  check_input(x);
  encoder_calls_->fetch_add(1);
  Var h = apply_layer(encoder_[1], apply_layer(encoder_[0], x));
  for (std::size_t i = 2; i + 1 < encoder_.size(); i += 2) h = add(h, apply_layer(encoder_[i + 1], apply_layer(encoder_[i], h)));
  return h;
}

Var MultiTaskGenerator::decode(std::size_t task, const Var& latent) const {
  check_task(task);
  Var h = latent;
  for (const Layer& l : decoders_[task]) h = apply_layer(l, h);
  return project_epsilon(tanh(h), config_.eps, config_.norm, true);
}

Var MultiTaskGenerator::universal(std::size_t task) const {
  if (config_.mode != PerturbMode::universal) throw ConfigError("generator is not in universal mode");
  check_task(task);
  return decode(task, encode(constant(patterns_[task])));
}

Var MultiTaskGenerator::per_instance(std::size_t task, const Var& x) const {
  if (config_.mode != PerturbMode::per_instance) throw ConfigError("generator is not in per_instance mode");
  return decode(task, encode(x));
}

std::vector<Var> MultiTaskGenerator::all_tasks(const Var& x) const {
  if (config_.mode != PerturbMode::per_instance) throw ConfigError("generator is not in per_instance mode");
  const Var latent = encode(x);
  std::vector<Var> out;
  for (std::size_t t = 0; t < tasks(); ++t) out.push_back(decode(t, latent));
  return out;
}

Tensor MultiTaskGenerator::generate_universal(std::size_t task) const { return universal(task).value(); }

Tensor MultiTaskGenerator::generate_per_instance(std::size_t task, const Tensor& x) const {
  return per_instance(task, constant(x)).value();
}

Tensor MultiTaskGenerator::shared_encoding_path(const Tensor& x) const { return encode(constant(x)).value(); }

Tensor MultiTaskGenerator::decode_latent(std::size_t task, const Tensor& latent) const {
  return decode(task, constant(latent)).value();
}

namespace {

void append_params(std::vector<Var>& out, const std::vector<Layer>& layers) {
  for (const Layer& l : layers) {
    if (!l.spec.has_params()) continue;
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
}

}  // namespace

std::vector<Var> MultiTaskGenerator::encoder_parameters() const {
  std::vector<Var> out;
  append_params(out, encoder_);
  return out;
}

std::vector<Var> MultiTaskGenerator::decoder_parameters(std::size_t task) const {
  check_task(task);
  std::vector<Var> out;
  append_params(out, decoders_[task]);
  return out;
}

std::vector<Var> MultiTaskGenerator::parameters() const {
  std::vector<Var> out = encoder_parameters();
  for (const auto& d : decoders_) append_params(out, d);
  return out;
}

std::size_t MultiTaskGenerator::num_params() const { return count_values(parameters()); }

std::uint64_t MultiTaskGenerator::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const Var& p : parameters()) h = mta::checksum(p.value(), h);
  for (const Tensor& z : patterns_) h = mta::checksum(z, h);
  return h;
}

void MultiTaskGenerator::set_trainable(bool on) {
  for (Var& p : parameters()) {
    p.set_requires_grad(on);
    p.zero_grad();
  }
}

namespace {

void put_layers(NamedTensorArchive& a, const std::string& prefix, const std::vector<Layer>& layers) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].spec.has_params()) continue;
    a.add(prefix + ".L" + std::to_string(i) + ".weight", layers[i].weight.value());
    a.add(prefix + ".L" + std::to_string(i) + ".bias", layers[i].bias.value());
  }
}

void take_layers(const NamedTensorArchive& a, const std::string& prefix, std::vector<Layer>& layers) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Layer& l = layers[i];
    if (!l.spec.has_params()) continue;
    for (auto [var, suffix, shape] : {std::tuple{&l.weight, ".weight", weight_shape(l.spec)},
                                      std::tuple{&l.bias, ".bias", Shape{l.spec.out}}}) {
      const std::string name = prefix + ".L" + std::to_string(i) + suffix;
      const Tensor& t = a.get(name);
      if (t.shape() != shape) throw FormatError("checkpoint: '" + name + "' has shape " + shape_str(t.shape()));
      var->mutable_value() = t;
    }
  }
}

}  // namespace

NamedTensorArchive generator_to_archive(const MultiTaskGenerator& g) {
  NamedTensorArchive a;
  put_layers(a, "enc", g.encoder_);
  for (std::size_t t = 0; t < g.decoders_.size(); ++t) put_layers(a, "dec" + std::to_string(t), g.decoders_[t]);
  for (std::size_t t = 0; t < g.patterns_.size(); ++t) a.add("pattern" + std::to_string(t), g.patterns_[t]);
  a.manifest() = {{"type", "generator"}, {"config", generator_config_to_json(g.config_)}};
  return a;
}

MultiTaskGenerator generator_from_archive(const NamedTensorArchive& a) {
  GeneratorConfig config;
  try {
    if (a.manifest().at("type") != "generator") throw FormatError("archive is not a generator checkpoint");
    config = generator_config_from_json(a.manifest().at("config"));
    validate(config);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("generator manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("generator manifest: ") + e.what());
  }
  MultiTaskGenerator g = MultiTaskGenerator::create(config);
  take_layers(a, "enc", g.encoder_);
  for (std::size_t t = 0; t < g.decoders_.size(); ++t) take_layers(a, "dec" + std::to_string(t), g.decoders_[t]);
  for (std::size_t t = 0; t < g.patterns_.size(); ++t) {
    const Tensor& z = a.get("pattern" + std::to_string(t));
    if (z.shape() != g.patterns_[t].shape()) throw FormatError("checkpoint: pattern shape mismatch");
    g.patterns_[t] = z;
  }
  return g;
}

void save_generator(const MultiTaskGenerator& g, const std::filesystem::path& path) {
  generator_to_archive(g).save(path);
}

MultiTaskGenerator load_generator(const std::filesystem::path& path) {
  return generator_from_archive(NamedTensorArchive::load(path));
}

PerturbationBundle make_bundle(const MultiTaskGenerator& g) {
  PerturbationBundle b;
  for (std::size_t t = 0; t < g.tasks(); ++t) b.perturbations.push_back(g.generate_universal(t));
  b.mode = g.config().mode;
  b.eps = g.config().eps;
  b.norm = g.config().norm;
  b.generator_checksum = g.checksum();
  b.seed = g.config().seed;
  return b;
}

NamedTensorArchive bundle_to_archive(const PerturbationBundle& b) {
  NamedTensorArchive a;
  for (std::size_t t = 0; t < b.perturbations.size(); ++t) a.add("v" + std::to_string(t), b.perturbations[t]);
  a.manifest() = {{"type", "perturbations"},
                  {"tasks", b.perturbations.size()},
                  {"mode", to_string(b.mode)},
                  {"eps", b.eps},
                  {"norm", to_string(b.norm)},
                  {"generator_checksum", b.generator_checksum},
                  {"seed", b.seed}};
  return a;
}

PerturbationBundle bundle_from_archive(const NamedTensorArchive& a) {
  PerturbationBundle b;
  try {
    const auto& m = a.manifest();
    if (m.at("type") != "perturbations") throw FormatError("archive is not a perturbation bundle");
    b.mode = parse_mode(m.at("mode").get<std::string>());
    b.eps = m.at("eps").get<double>();
    b.norm = parse_norm(m.at("norm").get<std::string>());
    b.generator_checksum = m.at("generator_checksum").get<std::uint64_t>();
    b.seed = m.at("seed").get<std::uint64_t>();
    const auto n = m.at("tasks").get<std::size_t>();
    for (std::size_t t = 0; t < n; ++t) b.perturbations.push_back(a.get("v" + std::to_string(t)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bundle manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bundle manifest: ") + e.what());
  }
  return b;
}

std::string encode_pnm(const Tensor& v, double eps) {
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  Shape s = v.shape();
  if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
  if (s.size() != 3 || (s[0] != 1 && s[0] != 3)) {
    throw ShapeError("image dump needs 1 or 3 channels, got " + shape_str(v.shape()));
  }
  const std::size_t c = s[0], h = s[1], w = s[2];
  std::string out = (c == 1 ? "P5\n" : "P6\n") + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const auto& d = v.values();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double u = (d[(ch * h + y) * w + x] + eps) / (2.0 * eps) * 255.0;
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(u, 0.0, 255.0)))));
      }
    }
  }
  return out;
}

void write_pnm(const std::filesystem::path& path, const Tensor& v, double eps) {
  write_file(path, encode_pnm(v, eps));
}

}  // namespace mta
