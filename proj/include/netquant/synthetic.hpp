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

// Seeded stand-in for a 10-class 32x32 colour image set, emitted in the
// cifar-binary record format. Each class is an oriented colour grating with
// a coloured blob; samples are shifted, rotated, recoloured, partly occluded
// by another class's blob and corrupted with pixel noise, so neighbouring
// classes overlap and a small CNN reaches clearly imperfect accuracy.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <vector>

#include "netquant/bytes.hpp"
#include "netquant/dataset.hpp"
#include "netquant/rng.hpp"

namespace netquant {

struct SyntheticConfig {
  std::size_t classes = 10;
  double shift = 4.0;          // max translation in pixels
  double angle_jitter = 0.6;   // radians
  double color_jitter = 0.20;
  double noise = 0.25;
  double distractor = 0.5;   // chance of another class's blob
  double mix = 0.8;          // max weight of a second class's grating
  double blob_wander = 6.0;  // max blob displacement from its class position
};

namespace detail {

struct ClassPrototype {
  double angle, freq;
  std::array<double, 3> color, blob_color;
  double blob_x, blob_y, blob_r;
};

inline ClassPrototype prototype(std::uint64_t seed, std::size_t c, std::size_t classes) {
  Rng r = Rng::derive(seed, 0xC1A55000u + c);
  ClassPrototype p{};
  p.angle = std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
  p.freq = 2.0 + static_cast<double>(c % 3);
  for (auto& v : p.color) v = r.uniform(0.25, 0.75);
  for (auto& v : p.blob_color) v = r.uniform(0.1, 0.9);
  p.blob_x = r.uniform(9.0, 23.0);
  p.blob_y = r.uniform(9.0, 23.0);
  p.blob_r = r.uniform(4.0, 7.0);
  return p;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace detail

/// n records of 1 label byte + 3072 channel-major pixel bytes, labels drawn
/// uniformly. `stream` separates the train and test draws.
inline Bytes synthetic_cifar(std::size_t n, std::uint64_t seed, std::uint64_t stream,
                             const SyntheticConfig& cfg = {}) {
  std::vector<detail::ClassPrototype> protos;
  for (std::size_t c = 0; c < cfg.classes; ++c) protos.push_back(detail::prototype(seed, c, cfg.classes));
  Rng r = Rng::derive(seed, 0xDA7A0000u + stream);
  Bytes out;
  out.reserve(n * kCifarRecord);
  constexpr double side = static_cast<double>(kCifarSide);
  for (std::size_t s = 0; s < n; ++s) {
    const auto label = static_cast<std::size_t>(r.below(cfg.classes));
    const auto& p = protos[label];
    const double dx = r.uniform(-cfg.shift, cfg.shift), dy = r.uniform(-cfg.shift, cfg.shift);
    const double ang = p.angle + r.uniform(-cfg.angle_jitter, cfg.angle_jitter);
    const double freq = p.freq * r.uniform(0.85, 1.15);
    const double phase = r.uniform(0.0, 2.0 * std::numbers::pi);
    const double bright = r.uniform(0.7, 1.3);
    std::array<double, 3> col{}, bcol{};
    for (int k = 0; k < 3; ++k) {
      col[k] = p.color[k] + r.uniform(-cfg.color_jitter, cfg.color_jitter);
      bcol[k] = p.blob_color[k] + r.uniform(-cfg.color_jitter, cfg.color_jitter);
    }
    const bool distract = r.uniform() < cfg.distractor;
    const auto& q = protos[static_cast<std::size_t>(r.below(cfg.classes))];
    const double qx = r.uniform(4.0, 28.0), qy = r.uniform(4.0, 28.0);
    const auto& o = protos[static_cast<std::size_t>(r.below(cfg.classes))];
    const double alpha = r.uniform(0.0, cfg.mix);
    const double oa = o.angle + r.uniform(-cfg.angle_jitter, cfg.angle_jitter);
    const double ophase = r.uniform(0.0, 2.0 * std::numbers::pi);
    const double bx = p.blob_x + r.uniform(-cfg.blob_wander, cfg.blob_wander);
    const double by = p.blob_y + r.uniform(-cfg.blob_wander, cfg.blob_wander);
    const double ca = std::cos(ang), sa = std::sin(ang);
    const double oca = std::cos(oa), osa = std::sin(oa);
    out.push_back(static_cast<std::uint8_t>(label));
    std::array<std::array<double, kCifarSide * kCifarSide>, 3> img{};
    for (std::size_t y = 0; y < kCifarSide; ++y) {
      for (std::size_t x = 0; x < kCifarSide; ++x) {
        const double u = static_cast<double>(x) - dx, v = static_cast<double>(y) - dy;
        const double g1 = std::sin(2.0 * std::numbers::pi * freq * (u * ca + v * sa) / side + phase);
        const double g2 = std::sin(2.0 * std::numbers::pi * o.freq * (u * oca + v * osa) / side + ophase);
        const double g = 0.5 + 0.5 * ((1.0 - alpha) * g1 + alpha * g2);
        const double bd = std::hypot(static_cast<double>(x) - bx, static_cast<double>(y) - by);
        const double blob = 1.0 / (1.0 + std::exp((bd - p.blob_r) * 1.5));
        double occ = 0.0;
        if (distract) occ = 1.0 / (1.0 + std::exp((std::hypot(x - qx, y - qy) - q.blob_r) * 1.5));
        for (int k = 0; k < 3; ++k) {
          const double c = (1.0 - alpha) * col[k] + alpha * o.color[k];
          double val = c * (0.45 + 0.55 * g);
          val = val * (1.0 - blob) + bcol[k] * blob;
          val = val * (1.0 - occ) + q.blob_color[k] * occ;
          img[k][y * kCifarSide + x] = val * bright + cfg.noise * r.normal();
        }
      }
    }
    for (int k = 0; k < 3; ++k)
      for (double val : img[k]) out.push_back(detail::to_byte(val));
  }
  return out;
}

/// Writes data_batch_1.bin and test_batch.bin under dir.
inline void write_synthetic_cifar(const std::filesystem::path& dir, std::size_t n_train, std::size_t n_test,
                                  std::uint64_t seed, const SyntheticConfig& cfg = {}) {
  std::filesystem::create_directories(dir);
  write_file(dir / "data_batch_1.bin", synthetic_cifar(n_train, seed, 1, cfg));
  write_file(dir / "test_batch.bin", synthetic_cifar(n_test, seed, 2, cfg));
}

}  // namespace netquant
