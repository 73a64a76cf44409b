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

#include "mta/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mta/errors.hpp"

namespace mta {
namespace {

template <class T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("archive: truncated at byte " + std::to_string(pos_) + " (need " + std::to_string(n) +
                        " more)");
    }
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

void put_header(std::string& out, std::string_view name, NamedTensorArchive::DType dtype, const Shape& shape) {
  if (name.size() > 0xffff) throw FormatError("archive: entry name too long");
  if (shape.size() > 0xff) throw FormatError("archive: rank too large");
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out.append(name);
  out.push_back(static_cast<char>(dtype));
  out.push_back(static_cast<char>(shape.size()));
  for (auto d : shape) {
    if (d > 0xffffffffULL) throw FormatError("archive: dimension exceeds 32 bits");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
}

}  // namespace

void NamedTensorArchive::add(std::string name, Tensor tensor) {
  if (name == kManifestName) throw FormatError("archive: entry name '__manifest__' is reserved");
  if (contains(name)) throw FormatError("archive: duplicate entry '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(tensor));
}

bool NamedTensorArchive::contains(std::string_view name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return true;
  }
  return false;
}

const Tensor& NamedTensorArchive::get(std::string_view name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw FormatError("archive: missing entry '" + std::string(name) + "'");
}

std::string NamedTensorArchive::serialize() const {
  std::string out = "NTA1";
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size() + 1));
  for (const auto& [name, t] : entries_) {
    put_header(out, name, DType::f64, t.shape());
    for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  const std::string text = manifest_.dump();
  put_header(out, kManifestName, DType::utf8, Shape{text.size()});
  out.append(text);
  return out;
}

NamedTensorArchive NamedTensorArchive::parse(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4) != "NTA1") throw FormatError("archive: bad magic (expected NTA1)");
  const auto version = r.le<std::uint32_t>();
  if (version != kVersion) {
    throw FormatError("archive: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kVersion) + ")");
  }
  const auto count = r.le<std::uint32_t>();
  NamedTensorArchive archive;
  bool have_manifest = false;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto name_len = r.le<std::uint16_t>();
    std::string name(r.take(name_len));
    const auto dtype = r.le<std::uint8_t>();
    const auto rank = r.le<std::uint8_t>();
    Shape shape;
    for (std::uint8_t i = 0; i < rank; ++i) {
      const auto d = r.le<std::uint32_t>();
      if (d == 0) throw FormatError("archive: zero dimension in entry '" + name + "'");
      shape.push_back(d);
    }
    const std::size_t n = numel(shape);
    if (name == kManifestName) {
      if (dtype != static_cast<std::uint8_t>(DType::utf8) || rank != 1 || e + 1 != count) {
        throw FormatError("archive: malformed manifest entry");
      }
      try {
        archive.manifest_ = nlohmann::json::parse(r.take(n));
      } catch (const nlohmann::json::parse_error& err) {
        throw FormatError(std::string("archive: manifest is not valid JSON: ") + err.what());
      }
      have_manifest = true;
      continue;
    }
    std::vector<double> data(n);
    if (dtype == static_cast<std::uint8_t>(DType::f64)) {
      for (auto& v : data) v = std::bit_cast<double>(r.le<std::uint64_t>());
    } else if (dtype == static_cast<std::uint8_t>(DType::f32)) {
      for (auto& v : data) v = static_cast<double>(std::bit_cast<float>(r.le<std::uint32_t>()));
    } else {
      throw FormatError("archive: unknown dtype code " + std::to_string(dtype) + " in entry '" + name + "'");
    }
    archive.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!have_manifest) throw FormatError("archive: missing __manifest__ entry");
  if (!r.done()) throw FormatError("archive: trailing bytes after last entry");
  return archive;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void NamedTensorArchive::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

NamedTensorArchive NamedTensorArchive::load(const std::filesystem::path& path) { return parse(read_file(path)); }

}  // namespace mta
