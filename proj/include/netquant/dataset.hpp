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

// Dataset readers.
//
// cifar-binary: records of 1 label byte followed by 3072 pixel bytes (1024
// red, 1024 green, 1024 blue, row-major 32x32). A directory holds
// data_batch_*.bin for training and test_batch.bin for testing.
//
// idx: big-endian idx3-ubyte images (magic 0x00000803) with idx1-ubyte
// labels (magic 0x00000801). A directory holds train-images-idx3-ubyte,
// train-labels-idx1-ubyte, t10k-images-idx3-ubyte and t10k-labels-idx1-ubyte.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "netquant/bytes.hpp"
#include "netquant/error.hpp"
#include "netquant/rng.hpp"
#include "netquant/train.hpp"

namespace netquant {

enum class DatasetFormat { cifar_binary, idx };

inline DatasetFormat parse_dataset_format(const std::string& s) {
  if (s == "cifar-binary" || s == "cifar") return DatasetFormat::cifar_binary;
  if (s == "idx" || s == "idx-images") return DatasetFormat::idx;
  throw ConfigError("unknown dataset format '" + s + "'");
}

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;
inline constexpr std::size_t kCifarRecord = 1 + kCifarPixels;

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

/// Decodes a cifar-binary buffer. `base_offset` is added to reported offsets.
inline Dataset parse_cifar(std::span<const std::uint8_t> bytes, std::size_t classes = 10, std::size_t base_offset = 0) {
  if (bytes.empty()) throw FormatError("empty cifar file", base_offset);
  if (bytes.size() % kCifarRecord != 0)
    throw FormatError("file size " + std::to_string(bytes.size()) + " is not a multiple of the " +
                          std::to_string(kCifarRecord) + "-byte record",
                      base_offset + bytes.size() - bytes.size() % kCifarRecord);
  const std::size_t n = bytes.size() / kCifarRecord;
  Dataset d;
  d.images = Tensor({n, 3, kCifarSide, kCifarSide});
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kCifarRecord;
    if (rec[0] >= classes)
      throw FormatError("label " + std::to_string(rec[0]) + " out of range", base_offset + i * kCifarRecord);
    d.labels[i] = rec[0];
    float* out = d.images.data() + i * kCifarPixels;
    for (std::size_t p = 0; p < kCifarPixels; ++p) out[p] = static_cast<float>(rec[1 + p]) / 255.0f;
  }
  return d;
}

inline std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
  if (at + 4 > b.size()) throw FormatError("truncated idx header", at);
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

/// Decodes an idx image/label pair. Images of rank 3 (n, h, w) become a
/// single channel; rank 4 (n, c, h, w) is taken channel-major as stored.
inline Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels,
                         std::size_t classes = 10) {
  const std::uint32_t im = read_be32(images, 0);
  if ((im & 0xFFFFFF00u) != 0x00000800u) throw FormatError("bad idx image magic", 0);
  const std::size_t rank = im & 0xFFu;
  if (rank != 3 && rank != 4) throw FormatError("idx images must have rank 3 or 4", 3);
  Shape shape;
  std::size_t per = 1;
  for (std::size_t r = 0; r < rank; ++r) {
    const std::uint32_t dim = read_be32(images, 4 + 4 * r);
    if (dim == 0) throw FormatError("zero idx dimension", 4 + 4 * r);
    shape.push_back(dim);
    if (r > 0) per *= dim;
  }
  const std::size_t n = shape[0];
  const std::size_t header = 4 + 4 * rank;
  if (per > (std::size_t{1} << 28) || images.size() - header != n * per)
    throw FormatError("idx image payload does not match its header", header);
  if (read_be32(labels, 0) != 0x00000801u) throw FormatError("bad idx label magic", 0);
  if (read_be32(labels, 4) != n) throw FormatError("idx label count does not match images", 4);
  if (labels.size() != 8 + n) throw FormatError("idx label payload does not match its header", 8);
  Dataset d;
  Shape ts{n};
  if (rank == 3) ts.push_back(1);
  ts.insert(ts.end(), shape.begin() + 1, shape.end());
  d.images = Tensor(ts);
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[8 + i] >= classes) throw FormatError("label out of range", 8 + i);
    d.labels[i] = labels[8 + i];
  }
  for (std::size_t i = 0; i < n * per; ++i) d.images[i] = static_cast<float>(images[header + i]) / 255.0f;
  return d;
}

inline Dataset concat(std::vector<Dataset> parts) {
  if (parts.empty()) throw ArgumentError("nothing to concatenate");
  if (parts.size() == 1) return std::move(parts.front());
  std::size_t n = 0;
  for (const auto& p : parts) n += p.size();
  Shape shape{n};
  const Shape sample = parts.front().sample_shape();
  shape.insert(shape.end(), sample.begin(), sample.end());
  Dataset d;
  d.images = Tensor(shape);
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy(p.images.values().begin(), p.images.values().end(), d.images.data() + at);
    at += p.images.size();
    d.labels.insert(d.labels.end(), p.labels.begin(), p.labels.end());
  }
  return d;
}

inline Dataset load_cifar_file(const std::filesystem::path& file, std::size_t classes = 10) {
  try {
    return parse_cifar(read_file(file), classes);
  } catch (const FormatError& e) {
    throw FormatError(file.filename().string() + ": " + e.message(), e.offset());
  }
}

/// Loads the train and test parts of a dataset directory. A single
/// cifar-binary file is accepted as well and then serves as both parts.
inline DatasetSplit load_dataset(const std::filesystem::path& path, DatasetFormat format, std::size_t classes = 10) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw IoError("dataset path " + path.string() + " does not exist");
  DatasetSplit s;
  if (format == DatasetFormat::cifar_binary) {
    if (fs::is_regular_file(path)) {
      s.train = load_cifar_file(path, classes);
      s.test = s.train;
      return s;
    }
    std::vector<fs::path> batches;
    for (const auto& e : fs::directory_iterator(path)) {
      const auto name = e.path().filename().string();
      if (name.starts_with("data_batch_") && name.ends_with(".bin")) batches.push_back(e.path());
    }
    std::sort(batches.begin(), batches.end());
    if (batches.empty()) throw IoError("no data_batch_*.bin in " + path.string());
    if (!fs::exists(path / "test_batch.bin")) throw IoError("no test_batch.bin in " + path.string());
    std::vector<Dataset> parts;
    for (const auto& b : batches) parts.push_back(load_cifar_file(b, classes));
    s.train = concat(std::move(parts));
    s.test = load_cifar_file(path / "test_batch.bin", classes);
    return s;
  }
  auto pair = [&](const std::string& prefix) {
    const auto im = path / (prefix + "-images-idx3-ubyte");
    const auto lb = path / (prefix + "-labels-idx1-ubyte");
    if (!fs::exists(im) || !fs::exists(lb)) throw IoError("missing " + prefix + " idx files in " + path.string());
    try {
      return parse_idx(read_file(im), read_file(lb), classes);
    } catch (const FormatError& e) {
      throw FormatError(prefix + " idx: " + e.message(), e.offset());
    }
  };
  s.train = pair("train");
  s.test = pair("t10k");
  return s;
}

/// Deterministic subset of n samples (all when n is 0 or >= size), kept in
/// original order.
inline Dataset select_subset(const Dataset& d, std::size_t n, std::uint64_t seed) {
  if (n == 0 || n >= d.size()) return d;
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = Rng::derive(seed, 0x5B5E7u);
  rng.shuffle(std::span<std::size_t>(idx));
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return d.subset(idx);
}

}  // namespace netquant
