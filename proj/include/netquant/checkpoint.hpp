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

// Checkpoint container (little-endian):
//
//   "NQCK" u16 version u8 input_rank u32 input_dims[] u32 layer_count
//   per layer:
//     u8 kind u32 in u32 out u32 kernel u32 stride u32 padding u32 skip_from
//     weighted kinds only:
//       f32 weights[] f32 bias[]        sizes implied by the params
//       u8 mask[ceil(n / 8)]            bit i = mask bit of weight i, LSB-first
//       u8 has_codebook
//         u16 k f32 centroids[k] u8 frozen[k]
//   u32 meta_count { u16 key_len key u32 value_len value }
//   u32 crc32 of every preceding byte

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "netquant/bytes.hpp"
#include "netquant/codebook.hpp"
#include "netquant/error.hpp"
#include "netquant/network.hpp"

namespace netquant {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  Network network;
  std::map<std::string, std::string> meta;
};

inline Bytes pack_bits(std::span<const std::uint8_t> bits) {
  Bytes out((bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) out[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  return out;
}

inline Bytes save_checkpoint(const Network& net, const std::map<std::string, std::string>& meta = {}) {
  ByteWriter w;
  w.tag("NQCK");
  w.u16(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(net.input_shape().size()));
  for (std::size_t d : net.input_shape()) w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(net.size()));
  for (const Layer& l : net.layers()) {
    w.u8(static_cast<std::uint8_t>(l.kind));
    const auto& p = l.params;
    for (std::size_t v : {p.in_channels, p.out_channels, p.kernel, p.stride, p.padding, p.skip_from})
      w.u32(static_cast<std::uint32_t>(v));
    if (!l.weighted()) continue;
    for (float v : l.weights.values()) w.f32(v);
    for (float v : l.bias.values()) w.f32(v);
    w.raw(pack_bits(l.mask.bits()));
    w.u8(l.codebook ? 1 : 0);
    if (l.codebook) {
      w.u16(static_cast<std::uint16_t>(l.codebook->size()));
      for (float c : l.codebook->centroids()) w.f32(c);
      for (std::uint8_t f : l.codebook->frozen_flags()) w.u8(f);
    }
  }
  w.u32(static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    w.u16(static_cast<std::uint16_t>(k.size()));
    w.tag(k);
    w.u32(static_cast<std::uint32_t>(v.size()));
    w.tag(v);
  }
  const std::uint32_t crc = crc32_of(w.bytes());
  w.u32(crc);
  return std::move(w).take();
}

inline Checkpoint load_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 14) throw FormatError("truncated stream", bytes.size());
  {
    ByteReader magic(bytes);
    magic.expect_tag("NQCK");
  }
  const std::size_t body = bytes.size() - 4;
  if (ByteReader(bytes.subspan(body)).u32() != crc32_of(bytes.first(body)))
    throw FormatError("checksum mismatch", body);
  ByteReader r(bytes.first(body));
  r.expect_tag("NQCK");
  const std::size_t ver_at = r.offset();
  if (r.u16() != kCheckpointVersion) throw FormatError("unsupported version", ver_at);
  const std::size_t rank_at = r.offset();
  const std::uint8_t rank = r.u8();
  if (rank == 0 || rank > 4) throw FormatError("bad input rank", rank_at);
  Shape input;
  for (std::uint8_t i = 0; i < rank; ++i) input.push_back(r.u32());
  const std::uint32_t count = r.u32();
  r.require(count);
  std::vector<Layer> layers;
  for (std::uint32_t n = 0; n < count; ++n) {
    const std::size_t kind_at = r.offset();
    const std::uint8_t kind = r.u8();
    if (kind > static_cast<std::uint8_t>(LayerKind::softmax_loss)) throw FormatError("bad layer kind", kind_at);
    LayerParams p;
    p.in_channels = r.u32();
    p.out_channels = r.u32();
    p.kernel = r.u32();
    p.stride = r.u32();
    p.padding = r.u32();
    p.skip_from = r.u32();
    Layer l;
    switch (static_cast<LayerKind>(kind)) {
      case LayerKind::conv2d:
      case LayerKind::dense: {
        const bool conv = static_cast<LayerKind>(kind) == LayerKind::conv2d;
        const std::uint64_t nw = static_cast<std::uint64_t>(p.in_channels) * p.out_channels *
                                 (conv ? static_cast<std::uint64_t>(p.kernel) * p.kernel : 1);
        if (nw == 0 || (conv && p.stride == 0)) throw FormatError("bad layer parameters", kind_at);
        r.require(static_cast<std::size_t>(std::min<std::uint64_t>(nw, bytes.size())) * 4);
        l = conv ? Layer::conv2d(p.in_channels, p.out_channels, p.kernel, p.stride, p.padding)
                 : Layer::dense(p.in_channels, p.out_channels);
        for (std::size_t i = 0; i < l.weights.size(); ++i) l.weights[i] = r.f32();
        for (std::size_t i = 0; i < l.bias.size(); ++i) l.bias[i] = r.f32();
        const auto mask = r.raw((l.weights.size() + 7) / 8);
        for (std::size_t i = 0; i < l.weights.size(); ++i) l.mask.set(i, (mask[i / 8] >> (i % 8)) & 1u);
        const std::size_t cb_at = r.offset();
        const std::uint8_t has = r.u8();
        if (has > 1) throw FormatError("bad codebook flag", cb_at);
        if (has) {
          const std::uint16_t k = r.u16();
          std::vector<float> c(k);
          std::vector<std::uint8_t> f(k);
          for (auto& v : c) v = r.f32();
          for (auto& v : f) {
            v = r.u8();
            if (v > 1) throw FormatError("bad frozen flag", r.offset() - 1);
          }
          try {
            l.codebook = Codebook(std::move(c), std::move(f));
          } catch (const ArgumentError& e) {
            throw FormatError(std::string("invalid codebook: ") + e.what(), cb_at);
          }
        }
        break;
      }
      case LayerKind::relu: l = Layer::relu(); break;
      case LayerKind::maxpool:
        if (p.kernel == 0 || p.stride == 0) throw FormatError("bad pooling parameters", kind_at);
        l = Layer::maxpool(p.kernel, p.stride);
        break;
      case LayerKind::add: l = Layer::add(p.skip_from); break;
      case LayerKind::softmax_loss: l = Layer::softmax_loss(); break;
    }
    layers.push_back(std::move(l));
  }
  Checkpoint ck;
  const std::uint32_t nmeta = r.u32();
  r.require(nmeta);
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    const std::uint16_t kl = r.u16();
    const auto k = r.raw(kl);
    const std::uint32_t vl = r.u32();
    const auto v = r.raw(vl);
    ck.meta[std::string(k.begin(), k.end())] = std::string(v.begin(), v.end());
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes", r.offset());
  try {
    ck.network = Network(std::move(input), std::move(layers));
  } catch (const Error& e) {
    throw FormatError(std::string("inconsistent layer table: ") + e.what(), 0);
  }
  return ck;
}

inline void write_checkpoint(const std::filesystem::path& path, const Network& net,
                             const std::map<std::string, std::string>& meta = {}) {
  write_file(path, save_checkpoint(net, meta));
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) { return load_checkpoint(read_file(path)); }

}  // namespace netquant
