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
#include <cstdint>
#include <string_view>
#include <vector>

namespace mta {

// Counter-based, splittable generator. Output i of a stream with key k is
// mix(k + i * golden), so streams are reproducible on every platform and
// independent sub-streams can be derived by name without sharing state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

  // Child stream keyed by (parent key, name). Does not advance the parent.
  Rng split(std::string_view name) const;
  Rng split(std::uint64_t index) const;

  std::uint64_t next_u64() { return mix(key_ + (counter_++) * 0x9e3779b97f4a7c15ULL); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller; no cached spare so the stream stays counter-addressable.
  double normal();
  // Uniform integer in [0, n).
  std::size_t below(std::size_t n);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  static std::uint64_t mix(std::uint64_t z);

 private:
  Rng(std::uint64_t key, std::uint64_t counter, int) : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace mta
