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

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "netquant/error.hpp"

namespace netquant {

/// Cluster index of each weight element, parallel to the flattened weights.
using Assignment = std::vector<std::uint32_t>;

/// Codebook size for bit-width b: one codeword for zero and 2^(b-1) for
/// non-zero centroids.
inline std::size_t centroid_count(int bits) {
  if (bits < 2) throw ArgumentError("bit-width must be at least 2, got " + std::to_string(bits));
  if (bits > 16) throw ArgumentError("bit-width above 16 is not supported");
  return (std::size_t{1} << (bits - 1)) + 1;
}

/// Minimum separation between two centroids of one codebook.
inline constexpr double kCentroidGap = 1e-12;

/// Per-layer ordered centroid list. Centroids are kept sorted ascending and
/// strictly distinct; each carries a frozen flag that is never cleared.
class Codebook {
 public:
  Codebook() = default;

  explicit Codebook(std::vector<float> centroids) : values_(std::move(centroids)) {
    frozen_.assign(values_.size(), 0);
    std::sort(values_.begin(), values_.end());
    validate();
  }

  Codebook(std::vector<float> centroids, std::vector<std::uint8_t> frozen)
      : values_(std::move(centroids)), frozen_(std::move(frozen)) {
    if (frozen_.size() != values_.size()) throw ArgumentError("codebook flag count mismatch");
    if (!std::is_sorted(values_.begin(), values_.end())) throw ArgumentError("codebook not sorted");
    validate();
  }

  /// Builds a codebook from unsorted values, separating collisions the same
  /// way normalize() does. `remap`, when given, receives input -> sorted index.
  static Codebook assemble(std::vector<float> values, std::vector<std::uint8_t> frozen,
                           std::vector<std::size_t>* remap = nullptr) {
    if (frozen.size() != values.size()) throw ArgumentError("codebook flag count mismatch");
    for (float v : values)
      if (!std::isfinite(v)) throw ArgumentError("non-finite centroid");
    Codebook cb;
    cb.values_ = std::move(values);
    cb.frozen_ = std::move(frozen);
    auto r = cb.normalize();
    if (remap) *remap = std::move(r);
    return cb;
  }

  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  float centroid(std::size_t j) const { return values_.at(j); }
  std::span<const float> centroids() const noexcept { return values_; }
  bool frozen(std::size_t j) const { return frozen_.at(j) != 0; }
  std::span<const std::uint8_t> frozen_flags() const noexcept { return frozen_; }

  std::size_t frozen_count() const {
    return static_cast<std::size_t>(std::count(frozen_.begin(), frozen_.end(), std::uint8_t{1}));
  }

  std::vector<std::size_t> unfrozen_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < size(); ++j)
      if (!frozen_[j]) out.push_back(j);
    return out;
  }

  void freeze(std::size_t j) {
    if (frozen_.at(j)) throw StateError("centroid " + std::to_string(j) + " already frozen");
    frozen_[j] = 1;
  }

  /// Moves an unfrozen centroid. Call normalize() afterwards to restore order.
  void set_centroid(std::size_t j, float v) {
    if (frozen_.at(j)) throw StateError("centroid " + std::to_string(j) + " is frozen");
    values_[j] = v;
  }

  /// Index of the centroid bit-identical to v, if any.
  std::optional<std::size_t> find(float v) const {
    for (std::size_t j = 0; j < size(); ++j)
      if (std::bit_cast<std::uint32_t>(values_[j]) == std::bit_cast<std::uint32_t>(v)) return j;
    return std::nullopt;
  }

  /// Re-sorts after set_centroid and returns old-index -> new-index. An
  /// unfrozen centroid that collides with a neighbour is pushed apart by the
  /// minimum gap; two colliding frozen centroids are a state error.
  std::vector<std::size_t> normalize() {
    std::vector<std::size_t> order(size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values_[a] < values_[b]; });
    std::vector<float> v(size());
    std::vector<std::uint8_t> f(size());
    std::vector<std::size_t> remap(size());
    for (std::size_t n = 0; n < order.size(); ++n) {
      v[n] = values_[order[n]];
      f[n] = frozen_[order[n]];
      remap[order[n]] = n;
    }
    for (std::size_t n = 1; n < v.size(); ++n) {
      if (static_cast<double>(v[n]) - static_cast<double>(v[n - 1]) > kCentroidGap) continue;
      if (!f[n]) {
        v[n] = bumped_above(v[n - 1]);
      } else if (!f[n - 1]) {
        v[n - 1] = bumped_below(v[n]);
        // the bump may now collide with the entry before it
        if (n >= 2 && static_cast<double>(v[n - 1]) - static_cast<double>(v[n - 2]) <= kCentroidGap)
          throw StateError("cannot separate centroids near " + std::to_string(v[n]));
      } else {
        throw StateError("two frozen centroids coincide at " + std::to_string(v[n]));
      }
    }
    values_ = std::move(v);
    frozen_ = std::move(f);
    return remap;
  }

  friend bool operator==(const Codebook&, const Codebook&) = default;

 private:
  static float bumped_above(float x) {
    float y = std::nextafter(x, INFINITY);
    while (static_cast<double>(y) - static_cast<double>(x) <= kCentroidGap) y = std::nextafter(y, INFINITY);
    return y;
  }
  static float bumped_below(float x) {
    float y = std::nextafter(x, -INFINITY);
    while (static_cast<double>(x) - static_cast<double>(y) <= kCentroidGap) y = std::nextafter(y, -INFINITY);
    return y;
  }

  void validate() const {
    for (float v : values_)
      if (!std::isfinite(v)) throw ArgumentError("non-finite centroid");
    for (std::size_t j = 1; j < values_.size(); ++j) {
      if (static_cast<double>(values_[j]) - static_cast<double>(values_[j - 1]) <= kCentroidGap)
        throw ArgumentError("codebook centroids not strictly distinct");
    }
  }

  std::vector<float> values_;
  std::vector<std::uint8_t> frozen_;
};

}  // namespace netquant
