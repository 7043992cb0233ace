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

// Iterative quantization drivers. Each round re-clusters the free weights,
// scores candidate clusters (or layer parts) by quantization loss, shares the
// highest-loss ones to their centroids, freezes them in the mask, and
// retrains whatever is still free.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "netquant/clustering.hpp"
#include "netquant/codebook.hpp"
#include "netquant/error.hpp"
#include "netquant/network.hpp"
#include "netquant/partition.hpp"
#include "netquant/rng.hpp"
#include "netquant/train.hpp"

namespace netquant {

enum class QuantMode { slq, eslq, mlq };
enum class EqEstimator { loss_delta, sse_proxy };

inline const char* to_string(QuantMode m) {
  switch (m) {
    case QuantMode::slq: return "slq";
    case QuantMode::eslq: return "eslq";
    case QuantMode::mlq: return "mlq";
  }
  return "?";
}

inline const char* to_string(EqEstimator e) { return e == EqEstimator::loss_delta ? "loss" : "sse"; }

inline QuantMode parse_quant_mode(const std::string& s) {
  if (s == "slq") return QuantMode::slq;
  if (s == "eslq") return QuantMode::eslq;
  if (s == "mlq") return QuantMode::mlq;
  throw ConfigError("unknown quantization mode '" + s + "'");
}

inline EqEstimator parse_eq_estimator(const std::string& s) {
  if (s == "loss") return EqEstimator::loss_delta;
  if (s == "sse") return EqEstimator::sse_proxy;
  throw ConfigError("unknown EQ estimator '" + s + "'");
}

struct QuantConfig {
  QuantMode mode = QuantMode::slq;
  int bits = 5;
  /// Empty means the default plan for the mode and cluster count. For MLQ it
  /// is the layer plan used by both phases.
  PartitionPlan plan;
  std::optional<TCentroidSpec> t_centroid;
  EqEstimator eq = EqEstimator::loss_delta;
  TrainConfig retrain;
  bool zero_heart = true;
  /// MLQ Hearts rounds snap each free weight to the nearest of all three
  /// centroids. Off forces every free weight of the layer onto b.
  bool heart_nearest = true;
  InitMode init = InitMode::exponential;
  std::size_t calibration_size = 256;
  /// Cluster count per layer for slq/eslq in place of centroid_count(bits).
  std::optional<std::size_t> clusters;
  std::size_t kmeans_max_iter = kDefaultKMeansMaxIter;
  double kmeans_tol = kDefaultKMeansTol;
  std::uint64_t seed = 1;

  std::size_t cluster_count() const {
    if (mode == QuantMode::mlq) return 3;
    return clusters.value_or(centroid_count(bits));
  }

  PartitionPlan cluster_plan() const { return plan.counts.empty() ? default_cluster_plan(cluster_count()) : plan; }
  PartitionPlan layer_plan(std::size_t layers) const {
    return plan.counts.empty() ? default_layer_plan(layers) : plan;
  }

  void validate(std::size_t weighted_layers) const {
    if (bits < 2) throw ConfigError("bit-width must be at least 2");
    if (mode == QuantMode::mlq) {
      if (bits != 2) throw ConfigError("mlq requires bit-width 2, got " + std::to_string(bits));
      layer_plan(weighted_layers).validate(weighted_layers, "weighted layers");
    } else {
      const std::size_t k = cluster_count();
      if (k == 0) throw ConfigError("cluster count must be positive");
      if (k > centroid_count(bits))
        throw ConfigError("cluster count " + std::to_string(k) + " exceeds the " + std::to_string(bits) +
                          "-bit codebook");
      cluster_plan().validate(k, "clusters");
    }
    if (mode == QuantMode::eslq) {
      if (!t_centroid) throw ConfigError("eslq needs a t-centroid spec");
      if (t_centroid->beta < 0.0) throw ConfigError("t-centroid beta must be non-negative");
    }
    if (calibration_size == 0 && eq == EqEstimator::loss_delta) throw ConfigError("calibration size must be positive");
    retrain.validate();
  }
};

/// Codebook and assignment of one weighted layer.
struct LayerQuant {
  std::size_t layer = 0;
  Codebook codebook;
  Assignment assignment;
};

struct RoundReport {
  std::size_t round = 0;  // 0-based across the whole run
  std::string phase;      // slq, eslq, boundaries, hearts
  std::vector<std::size_t> quantized_layers;
  std::vector<EqRecord> eq;
  EvalResult before;       // training set, before sharing
  EvalResult after_share;  // training set, after sharing
  EvalResult after;        // training set, after retraining
  std::optional<EvalResult> test;
  double frozen_fraction = 0.0;
  std::vector<EpochRow> epochs;
  double max_target_gap = 0.0;  // eslq: largest |centroid - target| before snapping
};

struct QuantReport {
  QuantMode mode = QuantMode::slq;
  int bits = 0;
  std::size_t clusters = 0;
  EqEstimator eq = EqEstimator::loss_delta;
  PartitionPlan plan;
  EvalResult baseline;
  std::optional<EvalResult> baseline_test;
  std::vector<RoundReport> rounds;
};

struct QuantState {
  QuantMode mode = QuantMode::slq;
  int bits = 0;
  std::size_t codebook_size = 0;
  std::vector<LayerQuant> layers;
  std::size_t round = 0;  // completed rounds
  QuantReport history;

  LayerQuant& at(std::size_t layer) {
    for (auto& l : layers)
      if (l.layer == layer) return l;
    throw ArgumentError("layer " + std::to_string(layer) + " is not quantized");
  }
  const LayerQuant& at(std::size_t layer) const { return const_cast<QuantState*>(this)->at(layer); }
};

struct RunHooks {
  const Dataset* test = nullptr;
  std::function<void(const Network&, const QuantState&)> on_round;
  std::function<void(const std::string&)> log;
};

/// Sets every weight of the listed clusters to its centroid, freezes those
/// mask bits and marks the centroids frozen. Nothing changes if any listed
/// cluster is already frozen.
inline void weight_share(Layer& layer, Codebook& codebook, const Assignment& assignment,
                         std::span<const std::size_t> clusters) {
  if (!layer.weighted()) throw ArgumentError("weight sharing on a layer without weights");
  if (assignment.size() != layer.weights.size()) throw ArgumentError("assignment size does not match layer");
  std::vector<std::uint8_t> pick(codebook.size(), 0);
  for (std::size_t j : clusters) {
    if (j >= codebook.size()) throw ArgumentError("cluster " + std::to_string(j) + " outside the codebook");
    if (codebook.frozen(j)) throw StateError("cluster " + std::to_string(j) + " is already frozen");
    if (pick[j]) throw ArgumentError("cluster " + std::to_string(j) + " listed twice");
    pick[j] = 1;
  }
  for (auto j : assignment)
    if (j >= codebook.size()) throw ArgumentError("assignment index outside the codebook");
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    const std::uint32_t j = assignment[i];
    if (!pick[j]) continue;
    layer.weights[i] = codebook.centroid(j);
    layer.mask.freeze(i);
  }
  for (std::size_t j : clusters) codebook.freeze(j);
}

struct Violation {
  static constexpr std::size_t kLayerWide = std::numeric_limits<std::size_t>::max();
  std::size_t layer = 0;
  std::size_t index = kLayerWide;  // weight index, or kLayerWide for codebook problems
  std::string reason;
};

/// Checks that every weight is frozen and bit-equal to a centroid of its
/// layer codebook, and that codebook sizes match the state.
inline std::vector<Violation> verify_quantized(const Network& net, const QuantState& state) {
  std::vector<Violation> out;
  for (std::size_t li : net.weighted_layers()) {
    const Layer& l = net.layer(li);
    const LayerQuant* lq = nullptr;
    for (const auto& q : state.layers)
      if (q.layer == li) lq = &q;
    if (!lq) {
      out.push_back({li, Violation::kLayerWide, "no codebook"});
      for (std::size_t i = 0; i < l.weights.size(); ++i) out.push_back({li, i, "unquantized"});
      continue;
    }
    if (lq->codebook.size() != state.codebook_size)
      out.push_back({li, Violation::kLayerWide,
                     "codebook size " + std::to_string(lq->codebook.size()) + ", expected " +
                         std::to_string(state.codebook_size)});
    for (std::size_t i = 0; i < l.weights.size(); ++i) {
      std::string why;
      if (l.mask.trainable(i)) why = "trainable";
      if (!lq->codebook.find(l.weights[i])) why += why.empty() ? "off-codebook" : ",off-codebook";
      if (!why.empty()) out.push_back({li, i, why});
    }
  }
  return out;
}

/// Rebuilds a state from the codebooks stored on the layers. Frozen weights
/// map to their bit-equal centroid; free weights to the nearest unfrozen one.
inline QuantState state_from_network(const Network& net, QuantMode mode, int bits, std::size_t codebook_size,
                                     std::size_t completed_rounds = 0) {
  QuantState s;
  s.mode = mode;
  s.bits = bits;
  s.codebook_size = codebook_size;
  s.round = completed_rounds;
  for (std::size_t li : net.weighted_layers()) {
    const Layer& l = net.layer(li);
    if (!l.codebook) throw StateError("layer " + std::to_string(li) + " has no codebook");
    LayerQuant q{li, *l.codebook, Assignment(l.weights.size(), 0)};
    const auto free_slots = q.codebook.unfrozen_indices();
    for (std::size_t i = 0; i < l.weights.size(); ++i) {
      const float w = l.weights[i];
      if (!l.mask.trainable(i)) {
        const auto j = q.codebook.find(w);
        if (!j) throw StateError("frozen weight " + std::to_string(i) + " of layer " + std::to_string(li) +
                                 " is not a centroid");
        q.assignment[i] = static_cast<std::uint32_t>(*j);
        continue;
      }
      if (free_slots.empty()) throw StateError("free weight in a fully frozen codebook");
      std::size_t best = free_slots[0];
      for (std::size_t j : free_slots)
        if (std::abs(static_cast<double>(w) - q.codebook.centroid(j)) <
            std::abs(static_cast<double>(w) - q.codebook.centroid(best)))
          best = j;
      q.assignment[i] = static_cast<std::uint32_t>(best);
    }
    s.layers.push_back(std::move(q));
  }
  return s;
}

namespace detail {

inline void log(const RunHooks& hooks, const std::string& msg) {
  if (hooks.log) hooks.log(msg);
}

inline double frozen_fraction(const Network& net) {
  std::size_t frozen = 0, total = 0;
  for (const auto& l : net.layers()) {
    if (!l.weighted()) continue;
    frozen += l.mask.frozen_count();
    total += l.mask.size();
  }
  return total ? static_cast<double>(frozen) / static_cast<double>(total) : 0.0;
}

inline Dataset calibration_batch(const Dataset& data, std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = Rng::derive(seed, 0xCA1Bu);
  rng.shuffle(std::span<std::size_t>(idx));
  idx.resize(std::min(n, idx.size()));
  std::sort(idx.begin(), idx.end());
  return data.subset(idx);
}

/// Initial clustering of a whole layer into k clusters.
inline LayerQuant cluster_layer(const Layer& l, std::size_t li, std::size_t k, const QuantConfig& cfg) {
  const auto w = l.weights.values();
  std::vector<float> init;
  if (k == 1) {
    double sum = 0.0;
    for (float v : w) sum += v;
    init = {static_cast<float>(sum / static_cast<double>(w.size()))};
  } else {
    init = init_centroids(w, k, cfg.init);
  }
  auto r = kmeans(w, init, cfg.kmeans_max_iter, cfg.kmeans_tol);
  return {li, std::move(r.codebook), std::move(r.assignment)};
}

/// Re-clusters the free weights of a layer into its unfrozen centroid slots,
/// starting from the current unfrozen centroids. Frozen weights, their
/// indices and the frozen centroids are left as they are. The codebook may
/// be out of order afterwards.
inline void recluster_free(const Layer& l, LayerQuant& q, const QuantConfig& cfg,
                           std::span<const std::optional<CentroidConstraint>> slot_constraints = {}) {
  const auto slots = q.codebook.unfrozen_indices();
  if (slots.empty()) return;
  std::vector<std::size_t> free_idx;
  std::vector<float> free_w;
  for (std::size_t i = 0; i < l.weights.size(); ++i) {
    if (!l.mask.trainable(i)) continue;
    free_idx.push_back(i);
    free_w.push_back(l.weights[i]);
  }
  if (free_w.empty()) return;
  std::vector<float> init;
  for (std::size_t j : slots) init.push_back(q.codebook.centroid(j));
  KMeansResult r;
  if (slot_constraints.empty()) {
    r = kmeans(free_w, init, cfg.kmeans_max_iter, cfg.kmeans_tol);
  } else {
    r = constrained_kmeans(free_w, init, slot_constraints, cfg.kmeans_max_iter, cfg.kmeans_tol, l.weights.size());
  }
  // slot s started at init[s] and ended at r.codebook[init_to_codebook[s]]
  std::vector<std::size_t> sorted_to_slot(slots.size());
  for (std::size_t s = 0; s < slots.size(); ++s) sorted_to_slot[r.init_to_codebook[s]] = slots[s];
  for (std::size_t s = 0; s < slots.size(); ++s)
    q.codebook.set_centroid(slots[s], r.codebook.centroid(r.init_to_codebook[s]));
  for (std::size_t n = 0; n < free_idx.size(); ++n)
    q.assignment[free_idx[n]] = static_cast<std::uint32_t>(sorted_to_slot[r.assignment[n]]);
}

/// Value of the centroid nearest to v; `heart` slots count as 0 when zero is set.
inline float nearest_value(const Codebook& cb, std::span<const std::size_t> heart, bool zero, float v) {
  float best = 0.0f;
  double d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < cb.size(); ++j) {
    const bool h = std::find(heart.begin(), heart.end(), j) != heart.end();
    const float c = h && zero ? 0.0f : cb.centroid(j);
    const double e = std::abs(static_cast<double>(v) - c);
    if (e < d) d = e, best = c;
  }
  return best;
}

/// Points every free weight at its nearest centroid.
inline void assign_nearest(const Layer& l, LayerQuant& q) {
  for (std::size_t i = 0; i < l.weights.size(); ++i) {
    if (!l.mask.trainable(i)) continue;
    std::uint32_t best = 0;
    double d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < q.codebook.size(); ++j) {
      const double e = std::abs(static_cast<double>(l.weights[i]) - q.codebook.centroid(j));
      if (e < d) d = e, best = static_cast<std::uint32_t>(j);
    }
    q.assignment[i] = best;
  }
}

/// Snaps and freezes free weights that now point at an already frozen centroid.
inline void snap_free(Layer& l, const LayerQuant& q) {
  for (std::size_t i = 0; i < l.weights.size(); ++i) {
    if (!l.mask.trainable(i) || !q.codebook.frozen(q.assignment[i])) continue;
    l.weights[i] = q.codebook.centroid(q.assignment[i]);
    l.mask.freeze(i);
  }
}

/// Restores codebook order after centroid edits and rewrites the assignment.
inline void renormalize(LayerQuant& q) {
  const auto remap = q.codebook.normalize();
  for (auto& a : q.assignment) a = static_cast<std::uint32_t>(remap[a]);
}

inline void sync_codebooks(Network& net, const QuantState& s) {
  for (const auto& q : s.layers) net.layer(q.layer).codebook = q.codebook;
}

inline std::vector<std::size_t> members(const Assignment& a, std::size_t j) { return members_of(a, j); }

/// EQ of every unfrozen, non-empty cluster of a layer. Empty clusters get 0.
inline std::vector<ClusterLoss> cluster_losses(const Network& net, const LayerQuant& q, const QuantConfig& cfg,
                                               LossProbe* probe) {
  std::vector<ClusterLoss> out;
  const auto& w = net.layer(q.layer).weights;
  for (std::size_t j : q.codebook.unfrozen_indices()) {
    const auto m = members(q.assignment, j);
    double eq = 0.0;
    if (!m.empty()) {
      if (cfg.eq == EqEstimator::sse_proxy) {
        eq = sse_proxy_loss(w.values(), q.codebook, q.assignment, j);
      } else {
        const float c = q.codebook.centroid(j);
        eq = probe->delta(q.layer, m, [c](std::size_t) { return c; });
      }
    }
    out.push_back({q.layer, j, eq});
  }
  return out;
}

inline void finish_round(Network& net, const Dataset& train_set, const QuantConfig& cfg, QuantState& state,
                         RoundReport& rep, const RunHooks& hooks) {
  for (auto& q : state.layers) net.layer(q.layer).codebook = q.codebook;
  rep.after_share = evaluate(net, train_set);
  Rng rng = Rng::derive(cfg.seed, 0x5EED0000u + rep.round);
  rep.epochs = train(net, train_set, cfg.retrain, rng);
  rep.after = evaluate(net, train_set);
  if (hooks.test) rep.test = evaluate(net, *hooks.test);
  rep.frozen_fraction = frozen_fraction(net);
  state.round = rep.round + 1;
  state.history.rounds.push_back(rep);
  log(hooks, "round " + std::to_string(rep.round) + " [" + rep.phase + "] loss " + std::to_string(rep.before.loss) +
                 " -> " + std::to_string(rep.after_share.loss) + " -> " + std::to_string(rep.after.loss) +
                 ", frozen " + std::to_string(rep.frozen_fraction));
  if (hooks.on_round) hooks.on_round(net, state);
}

inline QuantState begin_run(Network& net, const Dataset& train_set, const QuantConfig& cfg, const RunHooks& hooks,
                            std::optional<QuantState> resume) {
  if (train_set.empty()) throw ArgumentError("empty dataset");
  const auto wl = net.weighted_layers();
  if (wl.empty()) throw ConfigError("network has no weighted layers");
  cfg.validate(wl.size());
  if (resume) {
    if (resume->mode != cfg.mode || resume->bits != cfg.bits)
      throw ConfigError("resume state was produced by a different mode or bit-width");
    return std::move(*resume);
  }
  const std::size_t k = cfg.cluster_count();
  QuantState s;
  s.mode = cfg.mode;
  s.bits = cfg.bits;
  s.codebook_size = k;
  for (std::size_t li : wl) {
    if (!net.layer(li).mask.any_trainable() || net.layer(li).mask.frozen_count() != 0)
      throw StateError("layer " + std::to_string(li) + " is already partially quantized");
    s.layers.push_back(cluster_layer(net.layer(li), li, k, cfg));
  }
  s.history.mode = cfg.mode;
  s.history.bits = cfg.bits;
  s.history.clusters = k;
  s.history.eq = cfg.eq;
  s.history.plan = cfg.mode == QuantMode::mlq ? cfg.layer_plan(wl.size()) : cfg.cluster_plan();
  s.history.baseline = evaluate(net, train_set);
  if (hooks.test) s.history.baseline_test = evaluate(net, *hooks.test);
  return s;
}

struct EslqTargets {
  /// Per unfrozen slot; set for chosen clusters that own their typed value.
  std::vector<std::optional<CentroidConstraint>> cons;
  /// Chosen clusters whose typed value is already owned, with that value.
  std::vector<std::pair<std::size_t, float>> merged;
};

inline bool same_value(float x, float t) {
  return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(t) || (x == 0.0f && t == 0.0f);
}

/// Typed target of every chosen cluster of one layer. A frozen centroid or
/// the chosen cluster nearest to it owns a typed value; other chosen clusters
/// mapping to the same value merge into the owner.
inline EslqTargets eslq_targets(const LayerQuant& q, std::span<const std::size_t> chosen, const TCentroidSpec& spec) {
  std::vector<float> taken;
  for (std::size_t j = 0; j < q.codebook.size(); ++j)
    if (q.codebook.frozen(j)) taken.push_back(q.codebook.centroid(j));
  const auto slots = q.codebook.unfrozen_indices();
  EslqTargets out;
  out.cons.resize(slots.size());
  std::vector<std::size_t> order(chosen.begin(), chosen.end());
  auto gap = [&](std::size_t j) {
    const float c = q.codebook.centroid(j);
    return std::abs(static_cast<double>(c) - t_centroid(c, spec.kind));
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return gap(x) < gap(y); });
  for (std::size_t j : order) {
    const float t = t_centroid(q.codebook.centroid(j), spec.kind);
    if (std::any_of(taken.begin(), taken.end(), [t](float x) { return same_value(x, t); })) {
      out.merged.emplace_back(j, t);
      continue;
    }
    taken.push_back(t);
    const auto pos = static_cast<std::size_t>(std::find(slots.begin(), slots.end(), j) - slots.begin());
    out.cons[pos] = CentroidConstraint{t, spec.beta};
  }
  return out;
}

/// An unused typed value for an emptied cluster, so the codebook stays
/// distinct and typed.
inline float spare_typed_value(const Codebook& cb, float near, TCentroidKind kind) {
  for (float t : t_centroid_candidates(near, kind)) {
    bool used = false;
    for (float c : cb.centroids()) used = used || same_value(c, t);
    if (!used) return t;
  }
  throw StateError("no unused typed value near centroid " + std::to_string(near));
}

inline RoundReport slq_round(Network& net, const Dataset& train_set, const Dataset& calib, const QuantConfig& cfg,
                             QuantState& state, std::size_t m, std::size_t count) {
  RoundReport rep;
  rep.round = m;
  rep.phase = to_string(cfg.mode);
  if (m > 0)
    for (auto& q : state.layers) {
      recluster_free(net.layer(q.layer), q, cfg);
      renormalize(q);
    }
  for (auto& q : state.layers) net.layer(q.layer).codebook = q.codebook;
  rep.before = evaluate(net, train_set);

  std::optional<LossProbe> probe;
  if (cfg.eq == EqEstimator::loss_delta) probe.emplace(net, calib);
  std::vector<std::vector<ClusterLoss>> losses;
  for (const auto& q : state.layers) losses.push_back(cluster_losses(net, q, cfg, probe ? &*probe : nullptr));
  probe.reset();

  for (std::size_t n = 0; n < state.layers.size(); ++n) {
    LayerQuant& q = state.layers[n];
    Layer& layer = net.layer(q.layer);
    const Split split = loss_based_partition(losses[n], count);
    for (const auto& cl : losses[n]) {
      const bool chosen = std::find(split.quantize.begin(), split.quantize.end(), cl.cluster) != split.quantize.end();
      rep.eq.push_back({m, q.layer, std::to_string(cl.cluster), cl.eq, chosen});
    }
    std::vector<std::size_t> chosen = split.quantize;
    if (cfg.mode == QuantMode::eslq) {
      const auto targets = eslq_targets(q, chosen, *cfg.t_centroid);
      const auto slots = q.codebook.unfrozen_indices();
      recluster_free(layer, q, cfg, targets.cons);
      for (std::size_t s = 0; s < slots.size(); ++s) {
        if (!targets.cons[s]) continue;
        const auto t = static_cast<float>(targets.cons[s]->target);
        rep.max_target_gap =
            std::max(rep.max_target_gap, std::abs(static_cast<double>(q.codebook.centroid(slots[s])) - t));
        q.codebook.set_centroid(slots[s], t);
      }
      for (const auto& [j, t] : targets.merged) {
        std::size_t owner = q.codebook.size();
        for (std::size_t o = 0; o < q.codebook.size(); ++o) {
          const bool owns = q.codebook.frozen(o) || [&] {
            const auto pos = std::find(slots.begin(), slots.end(), o) - slots.begin();
            return static_cast<std::size_t>(pos) < slots.size() && targets.cons[static_cast<std::size_t>(pos)];
          }();
          if (owns && same_value(q.codebook.centroid(o), t)) owner = o;
        }
        for (auto& a : q.assignment)
          if (a == j) a = static_cast<std::uint32_t>(owner);
        q.codebook.set_centroid(j, spare_typed_value(q.codebook, t, cfg.t_centroid->kind));
      }
      // a snapped target may now sit on a free centroid; renormalize bumps the free one
      weight_share(layer, q.codebook, q.assignment, chosen);
      snap_free(layer, q);
      renormalize(q);
    } else {
      weight_share(layer, q.codebook, q.assignment, chosen);
    }
    rep.quantized_layers.push_back(q.layer);
  }
  return rep;
}

/// Weights of one layer belonging to the listed clusters.
inline std::vector<std::size_t> members_of_set(const LayerQuant& q, std::span<const std::size_t> clusters) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < q.assignment.size(); ++i)
    if (std::find(clusters.begin(), clusters.end(), q.assignment[i]) != clusters.end()) out.push_back(i);
  return out;
}

}  // namespace detail

/// Single-level quantization, and its typed-centroid variant when cfg.mode is
/// eslq. Round m re-clusters free weights (m > 0), scores every unfrozen
/// cluster, shares the plan[m] highest-loss clusters of every layer and
/// retrains the rest with a fresh learning-rate schedule.
inline QuantState run_slq(Network& net, const Dataset& train_set, const QuantConfig& cfg, const RunHooks& hooks = {},
                          std::optional<QuantState> resume = std::nullopt) {
  if (cfg.mode == QuantMode::mlq) throw ConfigError("run_slq called with mode mlq");
  QuantState state = detail::begin_run(net, train_set, cfg, hooks, std::move(resume));
  const Dataset calib = detail::calibration_batch(train_set, cfg.calibration_size, cfg.seed);
  const PartitionPlan plan = cfg.cluster_plan();
  for (std::size_t m = state.round; m < plan.rounds(); ++m) {
    RoundReport rep = detail::slq_round(net, train_set, calib, cfg, state, m, plan.counts[m]);
    detail::finish_round(net, train_set, cfg, state, rep, hooks);
  }
  detail::sync_codebooks(net, state);
  return state;
}

inline QuantState run_eslq(Network& net, const Dataset& train_set, const QuantConfig& cfg, const RunHooks& hooks = {},
                           std::optional<QuantState> resume = std::nullopt) {
  if (cfg.mode != QuantMode::eslq) throw ConfigError("run_eslq needs mode eslq");
  return run_slq(net, train_set, cfg, hooks, std::move(resume));
}

/// Ternary quantization. Every layer is clustered into a < b < c. The
/// Boundaries phase shares {a, c} layer group by layer group, highest layer
/// loss first, retraining all free weights between rounds; the Hearts phase
/// then shares b (to zero when zero_heart is set) the same way.
inline QuantState run_mlq(Network& net, const Dataset& train_set, const QuantConfig& cfg, const RunHooks& hooks = {},
                          std::optional<QuantState> resume = std::nullopt) {
  if (cfg.mode != QuantMode::mlq) throw ConfigError("run_mlq needs mode mlq");
  QuantState state = detail::begin_run(net, train_set, cfg, hooks, std::move(resume));
  const Dataset calib = detail::calibration_batch(train_set, cfg.calibration_size, cfg.seed);
  const PartitionPlan plan = cfg.layer_plan(state.layers.size());
  const std::size_t total_rounds = 2 * plan.rounds();

  for (std::size_t m = state.round; m < total_rounds; ++m) {
    const bool hearts = m >= plan.rounds();
    const std::size_t count = plan.counts[hearts ? m - plan.rounds() : m];
    RoundReport rep;
    rep.round = m;
    rep.phase = hearts ? "hearts" : "boundaries";

    if (m > 0)
      for (auto& q : state.layers) {
        detail::recluster_free(net.layer(q.layer), q, cfg);
        detail::renormalize(q);
      }
    for (auto& q : state.layers) net.layer(q.layer).codebook = q.codebook;
    rep.before = evaluate(net, train_set);

    // candidates: layers whose part of this phase is still unfrozen
    std::vector<std::size_t> cand;
    std::vector<std::vector<std::size_t>> part_of;
    for (std::size_t n = 0; n < state.layers.size(); ++n) {
      const auto& cb = state.layers[n].codebook;
      std::vector<std::size_t> part;
      if (hearts) {
        part = cb.unfrozen_indices();  // only the heart is left
      } else if (!cb.frozen(0) && !cb.frozen(2)) {
        part = {0, 2};
      }
      if (part.empty()) continue;
      cand.push_back(n);
      part_of.push_back(std::move(part));
    }
    std::optional<LossProbe> probe;
    if (cfg.eq == EqEstimator::loss_delta) probe.emplace(net, calib);
    std::vector<LayerLoss> losses;
    for (std::size_t c = 0; c < cand.size(); ++c) {
      const LayerQuant& q = state.layers[cand[c]];
      const auto idx = detail::members_of_set(q, part_of[c]);
      double eq = 0.0;
      if (!idx.empty()) {
        auto value = [&](std::size_t i) {
          if (hearts && cfg.heart_nearest) {
            const auto& w = net.layer(q.layer).weights;
            return detail::nearest_value(q.codebook, part_of[c], cfg.zero_heart, w[i]);
          }
          return hearts && cfg.zero_heart ? 0.0f : q.codebook.centroid(q.assignment[i]);
        };
        if (probe) {
          eq = probe->delta(q.layer, idx, value);
        } else {
          const auto& w = net.layer(q.layer).weights;
          for (std::size_t i : idx) eq += detail::sq(static_cast<double>(w[i]) - value(i));
        }
      }
      losses.push_back({cand[c], eq});
    }
    probe.reset();
    const Split split = ilc_partition(losses, count);
    for (const auto& ll : losses) {
      const bool chosen = std::find(split.quantize.begin(), split.quantize.end(), ll.layer) != split.quantize.end();
      rep.eq.push_back({m, state.layers[ll.layer].layer, hearts ? "heart" : "boundaries", ll.eq, chosen});
    }
    for (std::size_t n : split.quantize) {
      LayerQuant& q = state.layers[n];
      Layer& layer = net.layer(q.layer);
      const std::size_t c = static_cast<std::size_t>(std::find(cand.begin(), cand.end(), n) - cand.begin());
      if (hearts && cfg.zero_heart)
        for (std::size_t j : part_of[c]) q.codebook.set_centroid(j, 0.0f);
      if (hearts && cfg.heart_nearest) detail::assign_nearest(layer, q);
      weight_share(layer, q.codebook, q.assignment, part_of[c]);
      if (hearts && cfg.heart_nearest) detail::snap_free(layer, q);
      detail::renormalize(q);
      rep.quantized_layers.push_back(q.layer);
    }
    std::sort(rep.quantized_layers.begin(), rep.quantized_layers.end());
    detail::finish_round(net, train_set, cfg, state, rep, hooks);
  }
  detail::sync_codebooks(net, state);
  return state;
}

/// Dispatches on cfg.mode.
inline QuantState run_quantization(Network& net, const Dataset& train_set, const QuantConfig& cfg,
                                   const RunHooks& hooks = {}, std::optional<QuantState> resume = std::nullopt) {
  switch (cfg.mode) {
    case QuantMode::slq: return run_slq(net, train_set, cfg, hooks, std::move(resume));
    case QuantMode::eslq: return run_eslq(net, train_set, cfg, hooks, std::move(resume));
    case QuantMode::mlq: return run_mlq(net, train_set, cfg, hooks, std::move(resume));
  }
  throw ConfigError("unknown mode");
}

}  // namespace netquant
