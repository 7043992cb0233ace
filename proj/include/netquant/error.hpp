// Copyright 2026 The netquant Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace netquant {

/// Base class for every error raised by the library. `code()` is a short
/// stable token used by the CLI for machine-parsable failure lines.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* code() const noexcept { return "error"; }
};

/// Invalid argument to an operation (empty input, out-of-range count).
class ArgumentError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "argument"; }
};

/// Inconsistent configuration (layer shapes that do not chain, plan/k mismatch).
class ConfigError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "config"; }
};

/// Non-finite value produced during a numeric computation.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::size_t layer)
      : Error(what + " (layer " + std::to_string(layer) + ")"), layer_(layer) {}
  const char* code() const noexcept override { return "numeric"; }
  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

/// Operation invoked on an object in the wrong state (re-freezing a frozen
/// cluster, encoding an unquantized network).
class StateError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "state"; }
};

/// Malformed serialized data; carries the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " at byte offset " + std::to_string(offset)), message_(what), offset_(offset) {}
  const char* code() const noexcept override { return "format"; }
  std::size_t offset() const noexcept { return offset_; }
  /// Message without the offset suffix.
  const std::string& message() const noexcept { return message_; }

 private:
  std::string message_;
  std::size_t offset_;
};

/// File system failure.
class IoError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "io"; }
};

}  // namespace netquant
