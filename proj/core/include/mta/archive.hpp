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

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mta/tensor.hpp"

namespace mta {

// Binary container for named tensors plus a JSON manifest.
//
// Layout, all integers little-endian:
//   "NTA1" | u32 version | u32 entry count | entries...
//   entry: u16 name length | UTF-8 name | u8 dtype | u8 rank | u32 dims[rank] | payload
// dtype 0 = float32, 1 = float64, 2 = UTF-8 bytes (used only by the manifest).
// The last entry is always "__manifest__" (dtype 2, rank 1).
class NamedTensorArchive {
 public:
  static constexpr std::uint32_t kVersion = 1;
  static constexpr std::string_view kManifestName = "__manifest__";

  enum class DType : std::uint8_t { f32 = 0, f64 = 1, utf8 = 2 };

  // Entries keep insertion order so serialization is byte-stable.
  void add(std::string name, Tensor tensor);
  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;  // FormatError when missing
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  nlohmann::json& manifest() { return manifest_; }
  const nlohmann::json& manifest() const { return manifest_; }

  std::string serialize() const;
  static NamedTensorArchive parse(std::string_view bytes);

  void save(const std::filesystem::path& path) const;
  static NamedTensorArchive load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  nlohmann::json manifest_ = nlohmann::json::object();
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace mta
