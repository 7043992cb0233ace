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

// Quantization-loss estimates for clusters and layer parts, and the
// loss-ranked split into a quantize set and a retrain set.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "netquant/codebook.hpp"
#include "netquant/error.hpp"
#include "netquant/network.hpp"
#include "netquant/train.hpp"

namespace netquant {

/// Loss increase from snapping one cluster of one layer to its centroid.
struct ClusterLoss {
  std::size_t layer = 0;
  std::size_t cluster = 0;
  double eq = 0.0;
};

/// Loss increase from snapping one part (Boundaries or Heart) of a layer.
struct LayerLoss {
  std::size_t layer = 0;
  double eq = 0.0;
};

/// Disjoint quantize / retrain index sets (cluster or layer indices).
struct Split {
  std::vector<std::size_t> quantize;
  std::vector<std::size_t> retrain;
};

/// Per-round counts of clusters (single-level) or layers (layer-wise rounds).
struct PartitionPlan {
  std::vector<std::size_t> counts;

  std::size_t total() const {
    std::size_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
  std::size_t rounds() const noexcept { return counts.size(); }

  void validate(std::size_t expected_total, const std::string& what) const {
    if (counts.empty()) throw ConfigError("empty partition plan");
    for (auto c : counts)
      if (c == 0) throw ConfigError("partition plan entries must be positive");
    if (total() != expected_total)
      throw ConfigError("partition plan sums to " + std::to_string(total()) + " but there are " +
                        std::to_string(expected_total) + " " + what);
  }

  std::string to_string() const {
    std::string s;
    for (std::size_t i = 0; i < counts.size(); ++i) s += (i ? "," : "") + std::to_string(counts[i]);
    return s;
  }

  static PartitionPlan parse(const std::string& text) {
    PartitionPlan p;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      std::size_t used = 0;
      long v = 0;
      try {
        v = std::stol(item, &used);
      } catch (const std::exception&) {
        throw ConfigError("bad partition plan entry '" + item + "'");
      }
      if (used != item.size() || v <= 0) throw ConfigError("bad partition plan entry '" + item + "'");
      p.counts.push_back(static_cast<std::size_t>(v));
    }
    return p;
  }
};

/// Default cluster plan for k clusters. The 17/9/5-cluster plans are the
/// published 5/4/3-bit settings; other k use a geometric decay that takes
/// round(0.3 * remaining) clusters (at least one) each round.
inline PartitionPlan default_cluster_plan(std::size_t k) {
  if (k == 17) return {{5, 4, 4, 2, 2}};
  if (k == 9) return {{3, 2, 2, 2}};
  if (k == 5) return {{2, 2, 1}};
  PartitionPlan p;
  std::size_t remaining = k;
  while (remaining > 0) {
    const auto take = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.3 * static_cast<double>(remaining))));
    p.counts.push_back(std::min(take, remaining));
    remaining -= p.counts.back();
  }
  return p;
}

/// Default layer plan: rounds of ceil(L / 3) layers.
inline PartitionPlan default_layer_plan(std::size_t layers) {
  PartitionPlan p;
  const std::size_t group = std::max<std::size_t>(1, (layers + 2) / 3);
  for (std::size_t left = layers; left > 0;) {
    p.counts.push_back(std::min(group, left));
    left -= p.counts.back();
  }
  return p;
}

namespace detail {

struct Ranked {
  std::size_t id;
  double eq;
};

inline Split rank_split(std::vector<Ranked> items, std::size_t count) {
  if (count == 0 || count > items.size())
    throw ArgumentError("partition count " + std::to_string(count) + " out of range 1.." +
                        std::to_string(items.size()));
  for (const auto& it : items)
    if (!std::isfinite(it.eq)) throw ArgumentError("non-finite quantization loss for index " + std::to_string(it.id));
  std::stable_sort(items.begin(), items.end(), [](const Ranked& a, const Ranked& b) {
    return a.eq > b.eq || (a.eq == b.eq && a.id < b.id);
  });
  Split s;
  for (std::size_t i = 0; i < items.size(); ++i) (i < count ? s.quantize : s.retrain).push_back(items[i].id);
  return s;
}

}  // namespace detail

/// Highest-loss `count` clusters go to the quantize set (ties: lower cluster
/// index first); the rest are retrained.
inline Split loss_based_partition(std::span<const ClusterLoss> losses, std::size_t count) {
  std::vector<detail::Ranked> items;
  for (const auto& l : losses) items.push_back({l.cluster, l.eq});
  return detail::rank_split(std::move(items), count);
}

/// Layer-level counterpart of loss_based_partition.
inline Split ilc_partition(std::span<const LayerLoss> losses, std::size_t count) {
  std::vector<detail::Ranked> items;
  for (const auto& l : losses) items.push_back({l.layer, l.eq});
  return detail::rank_split(std::move(items), count);
}

/// Evaluates the calibration loss of the network with one layer's weights
/// replaced, re-running only the layers from that one onwards. Never
/// modifies the network.
class LossProbe {
 public:
  LossProbe(const Network& net, const Dataset& calibration)
      : net_(&net), pristine_(forward_cached(net, calibration.images, calibration.labels)) {
    baseline_ = detail::score(net, pristine_).loss;
    scratch_ = pristine_;
    clean_upto_ = net.size();
  }

  double baseline() const noexcept { return baseline_; }

  double loss_with(std::size_t layer, const Tensor& weights) {
    // activations up to `layer` must be the unperturbed ones
    for (std::size_t j = clean_upto_ + 1; j <= layer && j < scratch_.acts.size(); ++j) scratch_.acts[j] = pristine_.acts[j];
    const double loss = forward_from(*net_, layer, weights, scratch_).loss;
    clean_upto_ = layer;
    return loss;
  }

  /// Loss delta of snapping the listed weights (indices into the layer) to
  /// `value_of(index)`.
  template <typename ValueOf>
  double delta(std::size_t layer, std::span<const std::size_t> members, ValueOf value_of) {
    Tensor w = net_->layer(layer).weights;
    for (std::size_t i : members) w[i] = value_of(i);
    return loss_with(layer, w) - baseline_;
  }

 private:
  const Network* net_;
  ForwardCache pristine_;
  ForwardCache scratch_;
  std::size_t clean_upto_;
  double baseline_ = 0.0;
};

namespace detail {

inline std::vector<std::size_t> members_of(const Assignment& a, std::size_t cluster) {
  std::vector<std::size_t> m;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] == cluster) m.push_back(i);
  return m;
}

inline void check_layer(const Network& net, std::size_t layer, const Codebook& cb, const Assignment& a) {
  if (layer >= net.size() || !net.layer(layer).weighted())
    throw ArgumentError("layer " + std::to_string(layer) + " has no weights");
  if (a.size() != net.layer(layer).weights.size()) throw ArgumentError("assignment size does not match layer");
  for (auto j : a)
    if (j >= cb.size()) throw ArgumentError("assignment index outside the codebook");
}

}  // namespace detail

/// EQ of one cluster: calibration loss with only that cluster's weights set
/// to its centroid, minus the loss of the unmodified network.
inline double cluster_quant_loss(const Network& net, std::size_t layer, const Codebook& codebook,
                                 const Assignment& assignment, std::size_t cluster, const Dataset& calibration) {
  detail::check_layer(net, layer, codebook, assignment);
  if (calibration.empty()) throw ArgumentError("empty calibration batch");
  const auto members = detail::members_of(assignment, cluster);
  if (members.empty()) throw ArgumentError("cluster " + std::to_string(cluster) + " is empty");
  LossProbe probe(net, calibration);
  const float c = codebook.centroid(cluster);
  return probe.delta(layer, members, [c](std::size_t) { return c; });
}

/// Data-free EQ estimate: squared distance of the cluster's weights to its centroid.
inline double sse_proxy_loss(std::span<const float> weights, const Codebook& codebook, const Assignment& assignment,
                             std::size_t cluster) {
  if (assignment.size() != weights.size()) throw ArgumentError("assignment size does not match weights");
  const double c = codebook.centroid(cluster);
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (assignment[i] != cluster) continue;
    const double d = static_cast<double>(weights[i]) - c;
    s += d * d;
  }
  return s;
}

enum class LayerPart { boundaries, heart };

inline const char* to_string(LayerPart p) { return p == LayerPart::boundaries ? "boundaries" : "heart"; }

/// Clusters making up a part of a three-centroid codebook (a < b < c):
/// Boundaries are {a, c}, the Heart is {b}.
inline std::vector<std::size_t> part_clusters(LayerPart part) {
  return part == LayerPart::boundaries ? std::vector<std::size_t>{0, 2} : std::vector<std::size_t>{1};
}

/// EQ of snapping one layer's Boundaries or Heart. The Heart snaps to
/// `heart_value` when given (zero for ternary deployment), otherwise to its centroid.
inline double layer_quant_loss(const Network& net, std::size_t layer, const Codebook& codebook,
                               const Assignment& assignment, LayerPart part, const Dataset& calibration,
                               std::optional<float> heart_value = std::nullopt) {
  if (codebook.size() != 3)
    throw StateError("layer " + std::to_string(layer) + " needs a 3-centroid codebook, has " +
                     std::to_string(codebook.size()));
  detail::check_layer(net, layer, codebook, assignment);
  if (calibration.empty()) throw ArgumentError("empty calibration batch");
  LossProbe probe(net, calibration);
  std::vector<std::size_t> members;
  for (std::size_t j : part_clusters(part)) {
    const auto m = detail::members_of(assignment, j);
    members.insert(members.end(), m.begin(), m.end());
  }
  auto target = [&](std::size_t i) {
    const std::size_t j = assignment[i];
    return (j == 1 && heart_value) ? *heart_value : codebook.centroid(j);
  };
  return probe.delta(layer, members, target);
}

/// One scored candidate in a round's EQ table.
struct EqRecord {
  std::size_t round = 0;
  std::size_t layer = 0;
  std::string cluster;  // cluster index, or "boundaries" / "heart"
  double eq = 0.0;
  bool chosen = false;
};

inline std::string eq_csv(std::span<const EqRecord> rows) {
  std::ostringstream os;
  os.precision(9);
  os << "round,layer,cluster,eq,chosen\n";
  for (const auto& r : rows)
    os << r.round << ',' << r.layer << ',' << r.cluster << ',' << r.eq << ',' << (r.chosen ? "quantize" : "retrain")
       << '\n';
  return os.str();
}

}  // namespace netquant
