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

// Encoded-model format (all integers little-endian):
//
//   "NQEM" u16 version u8 bits u8 flags(0) u32 layer_count
//   per layer:
//     u32 layer_index u8 kind(0 conv2d, 1 dense) u8 rank u32 dims[rank]
//     u64 weight_count u16 centroid_count
//     u8 zero_codeword   1: codeword 0 is +0.0 and not stored
//                        0: codeword 0 is the smallest-magnitude centroid, stored
//     f32 codeword0      (only when zero_codeword == 0)
//     f32 centroids      remaining centroids, ascending, codewords 1..
//     u8 indices[ceil(weight_count * bits / 8)]   b-bit codes, LSB-first
//     u32 bias_count f32 bias[bias_count]
//   u32 crc32 of every preceding byte

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "netquant/bytes.hpp"
#include "netquant/codebook.hpp"
#include "netquant/error.hpp"
#include "netquant/network.hpp"
#include "netquant/quantizer.hpp"

namespace netquant {

inline constexpr std::uint16_t kEncodedVersion = 1;

/// Bytes needed for n indices of b bits.
inline std::size_t packed_size(std::size_t n, int bits) {
  return (n * static_cast<std::size_t>(bits) + 7) / 8;
}

/// Packs b-bit codes LSB-first: code i occupies bits [i*b, (i+1)*b) of the
/// little-endian bit stream.
inline Bytes pack_indices(std::span<const std::uint32_t> codes, int bits) {
  Bytes out(packed_size(codes.size(), bits), 0);
  std::size_t bit = 0;
  for (std::uint32_t c : codes) {
    for (int k = 0; k < bits; ++k, ++bit)
      if ((c >> k) & 1u) out[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
  }
  return out;
}

inline std::vector<std::uint32_t> unpack_indices(std::span<const std::uint8_t> packed, std::size_t n, int bits) {
  if (packed.size() < packed_size(n, bits)) throw ArgumentError("packed index stream too short");
  std::vector<std::uint32_t> out(n, 0);
  std::size_t bit = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t c = 0;
    for (int k = 0; k < bits; ++k, ++bit)
      if ((packed[bit / 8] >> (bit % 8)) & 1u) c |= 1u << k;
    out[i] = c;
  }
  return out;
}

/// Codeword order of a sorted codebook: codeword 0 is +0.0 when present,
/// otherwise the smallest-magnitude centroid (ties to the lower value); the
/// rest follow in ascending order. Returns codeword -> codebook index.
inline std::vector<std::size_t> codeword_order(const Codebook& cb, bool* zero_present = nullptr) {
  std::size_t first = 0;
  bool zero = false;
  for (std::size_t j = 0; j < cb.size(); ++j) {
    if (std::bit_cast<std::uint32_t>(cb.centroid(j)) == 0u) {
      first = j;
      zero = true;
      break;
    }
    if (std::abs(cb.centroid(j)) < std::abs(cb.centroid(first))) first = j;
  }
  std::vector<std::size_t> order{first};
  for (std::size_t j = 0; j < cb.size(); ++j)
    if (j != first) order.push_back(j);
  if (zero_present) *zero_present = zero;
  return order;
}

struct DecodedLayer {
  std::size_t layer = 0;
  LayerKind kind = LayerKind::dense;
  Tensor weights;
  Tensor bias;
  Codebook codebook;  // ascending, every centroid frozen
  bool zero_codeword = false;
};

struct DecodedModel {
  int bits = 0;
  std::vector<DecodedLayer> layers;
};

/// Serializes a fully quantized network. The state is checked with
/// verify_quantized first.
inline Bytes encode_model(const Network& net, const QuantState& state, int bits) {
  const std::size_t limit = centroid_count(bits);
  if (const auto v = verify_quantized(net, state); !v.empty())
    throw StateError("model is not fully quantized: layer " + std::to_string(v.front().layer) +
                     (v.front().index == Violation::kLayerWide ? "" : " weight " + std::to_string(v.front().index)) +
                     " " + v.front().reason);
  ByteWriter w;
  w.tag("NQEM");
  w.u16(kEncodedVersion);
  w.u8(static_cast<std::uint8_t>(bits));
  w.u8(0);
  const auto wl = net.weighted_layers();
  w.u32(static_cast<std::uint32_t>(wl.size()));
  for (std::size_t li : wl) {
    const Layer& l = net.layer(li);
    const Codebook& cb = state.at(li).codebook;
    if (cb.size() > limit)
      throw StateError("layer " + std::to_string(li) + " has " + std::to_string(cb.size()) + " centroids, " +
                       std::to_string(bits) + " bits allow " + std::to_string(limit));
    w.u32(static_cast<std::uint32_t>(li));
    w.u8(l.kind == LayerKind::conv2d ? 0 : 1);
    w.u8(static_cast<std::uint8_t>(l.weights.shape().size()));
    for (std::size_t d : l.weights.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.u64(l.weights.size());
    w.u16(static_cast<std::uint16_t>(cb.size()));
    bool zero = false;
    const auto order = codeword_order(cb, &zero);
    w.u8(zero ? 1 : 0);
    for (std::size_t c = zero ? 1 : 0; c < order.size(); ++c) w.f32(cb.centroid(order[c]));
    std::vector<std::uint32_t> code_of(cb.size());
    for (std::size_t c = 0; c < order.size(); ++c) code_of[order[c]] = static_cast<std::uint32_t>(c);
    std::vector<std::uint32_t> codes(l.weights.size());
    for (std::size_t i = 0; i < codes.size(); ++i) codes[i] = code_of[*cb.find(l.weights[i])];
    w.raw(pack_indices(codes, bits));
    w.u32(static_cast<std::uint32_t>(l.bias.size()));
    for (float b : l.bias.values()) w.f32(b);
  }
  const std::uint32_t crc = crc32_of(w.bytes());
  w.u32(crc);
  return std::move(w).take();
}

inline DecodedModel decode_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw FormatError("truncated stream", bytes.size());
  {
    ByteReader magic(bytes);
    magic.expect_tag("NQEM");
  }
  const std::size_t body = bytes.size() - 4;
  ByteReader trailer(bytes.subspan(body));
  if (trailer.u32() != crc32_of(bytes.first(body))) throw FormatError("checksum mismatch", body);

  ByteReader r(bytes.first(body));
  r.expect_tag("NQEM");
  const std::size_t ver_at = r.offset();
  if (r.u16() != kEncodedVersion) throw FormatError("unsupported version", ver_at);
  const std::size_t bits_at = r.offset();
  DecodedModel m;
  m.bits = r.u8();
  if (m.bits < 2 || m.bits > 16) throw FormatError("bad bit-width", bits_at);
  if (r.u8() != 0) throw FormatError("unknown flags", bits_at + 1);
  const std::uint32_t n_layers = r.u32();
  r.require(n_layers);  // every layer record takes well over one byte
  for (std::uint32_t n = 0; n < n_layers; ++n) {
    DecodedLayer d;
    d.layer = r.u32();
    const std::size_t kind_at = r.offset();
    const std::uint8_t kind = r.u8();
    if (kind > 1) throw FormatError("bad layer kind", kind_at);
    d.kind = kind == 0 ? LayerKind::conv2d : LayerKind::dense;
    const std::size_t rank_at = r.offset();
    const std::uint8_t rank = r.u8();
    if (rank == 0 || rank > 4) throw FormatError("bad tensor rank", rank_at);
    Shape shape;
    for (std::uint8_t q = 0; q < rank; ++q) {
      const std::size_t at = r.offset();
      const std::uint32_t dim = r.u32();
      if (dim == 0) throw FormatError("zero dimension", at);
      shape.push_back(dim);
    }
    const std::size_t count_at = r.offset();
    const std::uint64_t count = r.u64();
    std::uint64_t expect = 1;
    for (std::size_t dim : shape) {
      expect *= dim;
      if (expect > (std::uint64_t{1} << 40)) throw FormatError("tensor too large", count_at);
    }
    if (count != expect) throw FormatError("weight count does not match shape", count_at);
    // the packed indices alone need this many bytes
    r.require(packed_size(static_cast<std::size_t>(count), m.bits));
    const std::size_t k_at = r.offset();
    const std::uint16_t k = r.u16();
    if (k == 0 || k > centroid_count(m.bits)) throw FormatError("bad centroid count", k_at);
    const std::size_t flag_at = r.offset();
    const std::uint8_t zero = r.u8();
    if (zero > 1) throw FormatError("bad zero-codeword flag", flag_at);
    d.zero_codeword = zero == 1;
    std::vector<float> table;
    if (d.zero_codeword) table.push_back(0.0f);
    const std::size_t cb_at = r.offset();
    while (table.size() < k) {
      const float v = r.f32();
      if (!std::isfinite(v)) throw FormatError("non-finite centroid", r.offset() - 4);
      table.push_back(v);
    }
    for (std::size_t c = 2; c < table.size(); ++c)
      if (!(table[c] > table[c - 1])) throw FormatError("centroids not ascending", cb_at);
    const std::size_t idx_at = r.offset();
    const auto packed = r.raw(packed_size(static_cast<std::size_t>(count), m.bits));
    const auto codes = unpack_indices(packed, static_cast<std::size_t>(count), m.bits);
    d.weights = Tensor(shape);
    for (std::size_t i = 0; i < codes.size(); ++i) {
      if (codes[i] >= table.size())
        throw FormatError("codeword " + std::to_string(codes[i]) + " out of range",
                          idx_at + i * static_cast<std::size_t>(m.bits) / 8);
      d.weights[i] = table[codes[i]];
    }
    const std::uint32_t nb = r.u32();
    r.require(static_cast<std::size_t>(nb) * 4);
    d.bias = Tensor({nb});
    for (std::uint32_t q = 0; q < nb; ++q) d.bias[q] = r.f32();
    std::vector<float> sorted = table;
    std::sort(sorted.begin(), sorted.end());
    try {
      d.codebook = Codebook(sorted, std::vector<std::uint8_t>(sorted.size(), 1));
    } catch (const ArgumentError&) {
      throw FormatError("centroids not distinct", cb_at);
    }
    m.layers.push_back(std::move(d));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes", r.offset());
  return m;
}

/// Writes decoded weights, biases and codebooks into a network of the same
/// architecture. Every weight becomes frozen.
inline void apply_decoded(Network& net, const DecodedModel& m) {
  const auto wl = net.weighted_layers();
  if (wl.size() != m.layers.size()) throw ConfigError("encoded model layer count does not match the network");
  for (std::size_t n = 0; n < wl.size(); ++n) {
    const DecodedLayer& d = m.layers[n];
    Layer& l = net.layer(wl[n]);
    if (d.layer != wl[n] || d.kind != l.kind || d.weights.shape() != l.weights.shape() ||
        d.bias.shape() != l.bias.shape())
      throw ConfigError("encoded layer " + std::to_string(d.layer) + " does not match the network");
  }
  for (std::size_t n = 0; n < wl.size(); ++n) {
    const DecodedLayer& d = m.layers[n];
    Layer& l = net.layer(wl[n]);
    l.weights = d.weights;
    l.bias = d.bias;
    l.mask = Mask(l.weights.shape(), 0);
    l.codebook = d.codebook;
  }
}

/// 32N / (bN + overhead). The overhead, when included, is 32 bits for each
/// stored non-zero centroid: 2^(b-1) per layer.
inline double compression_ratio(std::span<const std::size_t> layer_sizes, int bits, bool include_codebook) {
  const std::size_t k = centroid_count(bits);
  double n = 0.0;
  for (std::size_t s : layer_sizes) n += static_cast<double>(s);
  if (n == 0.0) throw ArgumentError("no weights");
  double denom = static_cast<double>(bits) * n;
  if (include_codebook) denom += 32.0 * static_cast<double>(k - 1) * static_cast<double>(layer_sizes.size());
  return 32.0 * n / denom;
}

inline double compression_ratio(const Network& net, int bits, bool include_codebook) {
  std::vector<std::size_t> sizes;
  for (std::size_t li : net.weighted_layers()) sizes.push_back(net.layer(li).weights.size());
  return compression_ratio(sizes, bits, include_codebook);
}

/// Two-decimal rendering used in reports.
inline std::string format_ratio(double r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << r;
  return os.str();
}

/// Weight counts of the eight layers of the classic 5-conv/3-fc ImageNet network.
inline std::vector<std::size_t> alexnet_layer_sizes() {
  return {34848, 307200, 884736, 663552, 442368, 37748736, 16777216, 4096000};
}

/// Text dump of an encoded model's header and codebooks.
inline std::string describe(const DecodedModel& m, std::size_t encoded_bytes) {
  std::ostringstream os;
  os << "format NQEM v" << kEncodedVersion << ", " << m.bits << "-bit, " << m.layers.size() << " layers, "
     << encoded_bytes << " bytes\n";
  std::size_t total = 0;
  std::vector<std::size_t> sizes;
  os << std::setprecision(9);
  for (const auto& d : m.layers) {
    total += d.weights.size();
    sizes.push_back(d.weights.size());
    os << "layer " << d.layer << " " << to_string(d.kind) << " " << shape_string(d.weights.shape()) << " weights "
       << d.weights.size() << " centroids " << d.codebook.size()
       << (d.zero_codeword ? " (zero codeword)" : " (codeword 0 = smallest magnitude)") << "\n  codebook:";
    for (float c : d.codebook.centroids()) os << ' ' << c;
    os << '\n';
  }
  if (!sizes.empty()) {
    os << "total weights " << total << ", compression " << format_ratio(compression_ratio(sizes, m.bits, false))
       << "x (indices only), " << format_ratio(compression_ratio(sizes, m.bits, true)) << "x (with codebooks)\n";
  }
  return os.str();
}

}  // namespace netquant
