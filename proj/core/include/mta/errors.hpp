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

#include <stdexcept>
#include <string>

namespace mta {

// Incompatible tensor shapes. The message names the op and the offending dims.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Argument outside an op's mathematical domain (log of 0, division by 0).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed archive, image or report file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid run configuration or invalid arguments to a builder.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A training loop produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int epoch)
      : std::runtime_error(what + " (epoch " + std::to_string(epoch) + ")"),
        epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

}  // namespace mta
