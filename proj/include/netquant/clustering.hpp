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

// Layer-wise scalar k-means over weight values, centroid initialisation, and
// the L1-regularised variant that pulls selected centroids towards typed
// target values (powers of two, two significant figures).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "netquant/codebook.hpp"
#include "netquant/error.hpp"

namespace netquant {

enum class InitMode { linear, exponential };

/// Ratio between successive exponential-init centroid magnitudes.
inline constexpr double kExponentialInitRatio = 0.5;

inline constexpr std::size_t kDefaultKMeansMaxIter = 300;
inline constexpr double kDefaultKMeansTol = 1e-6;

namespace detail {

inline std::size_t distinct_count(std::span<const float> w) {
  std::vector<float> v(w.begin(), w.end());
  std::sort(v.begin(), v.end());
  return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

inline double sq(double x) { return x * x; }

inline double nearest_distance(float w, std::span<const float> c) {
  double best = std::numeric_limits<double>::infinity();
  for (float v : c) best = std::min(best, sq(static_cast<double>(w) - v));
  return best;
}

/// Weight farthest from every centroid; ties resolve to the smaller value so
/// the choice does not depend on element order.
inline std::optional<float> farthest_point(std::span<const float> w, std::span<const float> c) {
  double best_d = 0.0;
  std::optional<float> best;
  for (float x : w) {
    const double d = nearest_distance(x, c);
    if (d > best_d || (best && d == best_d && x < *best)) {
      best_d = d;
      best = x;
    }
  }
  return best;
}

}  // namespace detail

/// Initial centroids for k clusters, sorted ascending and distinct.
///
/// linear: k evenly spaced values over [min(w), max(w)].
/// exponential: +-max|w| * r^j for j = 0 .. pairs-1 (r = 0.5) plus 0 when k is
/// odd, clamped to [min(w), max(w)]. Values lost to clamping duplicates are
/// replaced by farthest-point picks from the weights so exactly k come back.
inline std::vector<float> init_centroids(std::span<const float> weights, std::size_t k, InitMode mode) {
  if (weights.empty()) throw ArgumentError("cannot initialise centroids from no weights");
  if (k < 2) throw ArgumentError("need k >= 2, got " + std::to_string(k));
  if (k > detail::distinct_count(weights))
    throw ArgumentError("k = " + std::to_string(k) + " exceeds the number of distinct weight values");
  const auto [lo_it, hi_it] = std::minmax_element(weights.begin(), weights.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<float> c;
  if (mode == InitMode::linear) {
    for (std::size_t i = 0; i < k; ++i) {
      const double t = static_cast<double>(i) / static_cast<double>(k - 1);
      c.push_back(i + 1 == k ? static_cast<float>(hi) : static_cast<float>(lo + (hi - lo) * t));
    }
  } else {
    const double m = std::max(std::abs(lo), std::abs(hi));
    const std::size_t pairs = k % 2 ? (k - 1) / 2 : k / 2;
    double mag = m;
    for (std::size_t j = 0; j < pairs; ++j, mag *= kExponentialInitRatio) {
      c.push_back(static_cast<float>(std::clamp(mag, lo, hi)));
      c.push_back(static_cast<float>(std::clamp(-mag, lo, hi)));
    }
    if (k % 2) c.push_back(static_cast<float>(std::clamp(0.0, lo, hi)));
  }
  std::sort(c.begin(), c.end());
  c.erase(std::unique(c.begin(), c.end()), c.end());
  while (c.size() < k) {
    const auto p = detail::farthest_point(weights, c);
    if (!p) break;  // unreachable given the distinct-count check
    c.insert(std::upper_bound(c.begin(), c.end(), *p), *p);
  }
  return c;
}

/// Optional pull of one centroid towards a target, weighted by beta.
struct CentroidConstraint {
  double target = 0.0;
  double beta = 0.0;
};

struct KMeansResult {
  Codebook codebook;
  Assignment assignment;
  /// Objective after the initial assignment and after every iteration:
  /// SSE for plain k-means, SSE / n_total + sum beta |c - target| when
  /// constrained.
  std::vector<double> objective;
  std::size_t iterations = 0;
  /// Position in the returned codebook of each initial centroid.
  std::vector<std::size_t> init_to_codebook;

  double final_objective() const { return objective.empty() ? 0.0 : objective.back(); }
};

/// Minimiser over c of (1/n_total) * sum (w - c)^2 + beta * |c - target|.
/// Soft-threshold form: with m the cluster mean and n its size,
/// c* = target when |m - target| <= beta * n_total / (2n), otherwise m moved
/// towards the target by that shift.
inline double centroid_update_l1(std::span<const float> cluster_values, double target, double beta,
                                 std::size_t n_total) {
  if (cluster_values.empty()) throw ArgumentError("centroid update on an empty cluster");
  if (n_total < cluster_values.size()) throw ArgumentError("n_total smaller than the cluster");
  if (beta < 0.0) throw ArgumentError("beta must be non-negative");
  double sum = 0.0;
  for (float v : cluster_values) sum += v;
  const double n = static_cast<double>(cluster_values.size());
  const double m = sum / n;
  const double shift = beta * static_cast<double>(n_total) / (2.0 * n);
  if (std::abs(m - target) <= shift) return target;
  return m - std::copysign(shift, m - target);
}

namespace detail {

inline void assign_nearest(std::span<const float> w, std::span<const float> c, Assignment& a) {
  a.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double x = w[i];
    std::uint32_t best = 0;
    double bd = sq(x - c[0]);
    for (std::size_t j = 1; j < c.size(); ++j) {
      const double d = sq(x - c[j]);
      if (d < bd) {
        bd = d;
        best = static_cast<std::uint32_t>(j);
      }
    }
    a[i] = best;
  }
}

inline double objective(std::span<const float> w, std::span<const float> c, const Assignment& a,
                        std::span<const std::optional<CentroidConstraint>> cons, std::size_t n_total) {
  double sse = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) sse += sq(static_cast<double>(w[i]) - c[a[i]]);
  if (cons.empty()) return sse;
  double reg = 0.0;
  for (std::size_t j = 0; j < c.size(); ++j)
    if (cons[j]) reg += cons[j]->beta * std::abs(static_cast<double>(c[j]) - cons[j]->target);
  return sse / static_cast<double>(n_total) + reg;
}

inline KMeansResult lloyd(std::span<const float> w, std::span<const float> init,
                          std::span<const std::optional<CentroidConstraint>> cons, std::size_t n_total,
                          std::size_t max_iter, double tol) {
  if (w.empty()) throw ArgumentError("k-means on no weights");
  if (init.empty()) throw ArgumentError("k-means needs at least one initial centroid");
  for (std::size_t j = 1; j < init.size(); ++j)
    if (!(init[j] > init[j - 1])) throw ArgumentError("initial centroids must be sorted and distinct");
  if (!cons.empty() && cons.size() != init.size()) throw ArgumentError("constraint count mismatch");
  for (const auto& c : cons)
    if (c && c->beta < 0.0) throw ArgumentError("beta must be non-negative");
  if (n_total < w.size()) throw ArgumentError("n_total smaller than the weight count");

  const std::size_t k = init.size();
  std::vector<float> c(init.begin(), init.end());
  KMeansResult r;
  assign_nearest(w, c, r.assignment);
  double current = objective(w, c, r.assignment, cons, n_total);
  r.objective.push_back(current);

  std::vector<std::vector<float>> members(k);
  for (std::size_t it = 0; it < max_iter; ++it) {
    for (auto& m : members) m.clear();
    for (std::size_t i = 0; i < w.size(); ++i) members[r.assignment[i]].push_back(w[i]);

    std::vector<float> next = c;
    std::vector<std::size_t> empty;
    for (std::size_t j = 0; j < k; ++j) {
      const bool constrained = !cons.empty() && cons[j].has_value();
      if (members[j].empty()) {
        if (constrained) {
          next[j] = static_cast<float>(cons[j]->target);
        } else {
          empty.push_back(j);
        }
        continue;
      }
      if (constrained) {
        next[j] = static_cast<float>(centroid_update_l1(members[j], cons[j]->target, cons[j]->beta, n_total));
      } else {
        double sum = 0.0;
        for (float v : members[j]) sum += v;
        next[j] = static_cast<float>(sum / static_cast<double>(members[j].size()));
      }
    }
    // re-seed empty clusters at the farthest weight; their members are empty
    // so the objective is unaffected until the next assignment step
    for (std::size_t j : empty) {
      std::vector<float> others;
      for (std::size_t q = 0; q < k; ++q)
        if (q != j) others.push_back(next[q]);
      if (const auto p = farthest_point(w, others); p && nearest_distance(*p, others) > 0.0) next[j] = *p;
    }

    const double updated = objective(w, next, r.assignment, cons, n_total);
    if (updated > current) break;  // rounding noise at a fixed point
    double move = 0.0;
    for (std::size_t j = 0; j < k; ++j) move = std::max(move, std::abs(static_cast<double>(next[j]) - c[j]));
    c = std::move(next);
    assign_nearest(w, c, r.assignment);
    current = objective(w, c, r.assignment, cons, n_total);
    r.objective.push_back(current);
    r.iterations = it + 1;
    if (move < tol) break;
  }

  std::vector<std::size_t> remap;
  r.codebook = Codebook::assemble(c, std::vector<std::uint8_t>(k, 0), &remap);
  for (auto& a : r.assignment) a = static_cast<std::uint32_t>(remap[a]);
  r.init_to_codebook = std::move(remap);
  return r;
}

}  // namespace detail

/// Lloyd iterations: nearest-centroid assignment (ties to the lower index),
/// centroid = cluster mean, until the largest centroid move drops below tol
/// or max_iter is reached. Empty clusters are re-seeded at the weight
/// farthest from its nearest centroid.
inline KMeansResult kmeans(std::span<const float> weights, std::span<const float> init,
                           std::size_t max_iter = kDefaultKMeansMaxIter, double tol = kDefaultKMeansTol) {
  return detail::lloyd(weights, init, {}, weights.size(), max_iter, tol);
}

/// Lloyd loop where centroid j with a constraint is updated by
/// centroid_update_l1 and the others by the mean. `n_total` is the layer
/// weight count used to scale the data term (defaults to weights.size()).
inline KMeansResult constrained_kmeans(std::span<const float> weights, std::span<const float> init,
                                       std::span<const std::optional<CentroidConstraint>> constraints,
                                       std::size_t max_iter = kDefaultKMeansMaxIter, double tol = kDefaultKMeansTol,
                                       std::optional<std::size_t> n_total = std::nullopt) {
  std::vector<std::optional<CentroidConstraint>> cons(constraints.begin(), constraints.end());
  if (cons.empty()) cons.resize(init.size());
  return detail::lloyd(weights, init, cons, n_total.value_or(weights.size()), max_iter, tol);
}

/// Sum of squared errors of an assignment against a codebook.
inline double sse(std::span<const float> weights, const Codebook& cb, const Assignment& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += detail::sq(static_cast<double>(weights[i]) - cb.centroid(a[i]));
  return s;
}

// ---------------------------------------------------------------------------
// Typed targets

enum class TCentroidKind { power_of_two, scientific_2sig };

inline const char* to_string(TCentroidKind k) {
  return k == TCentroidKind::power_of_two ? "power-of-two" : "scientific-2sig";
}

struct TCentroidSpec {
  TCentroidKind kind = TCentroidKind::power_of_two;
  double beta = 1.0;
};

inline float round_to_2sig(double v) {
  if (v == 0.0) return 0.0f;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1e", v);
  return std::strtof(buf, nullptr);
}

/// Nearest value of the requested type.
/// power_of_two: nearest of {0} and {+-2^z : 2^z <= 2|v|}, ties to the smaller
/// magnitude. scientific_2sig: v rounded to two significant decimal figures.
inline float t_centroid(float value, TCentroidKind kind) {
  if (value == 0.0f || !std::isfinite(value)) return value == 0.0f ? 0.0f : value;
  if (kind == TCentroidKind::scientific_2sig) return round_to_2sig(value);
  const double a = std::abs(static_cast<double>(value));
  int e = 0;
  std::frexp(a, &e);  // a in [2^(e-1), 2^e)
  const double lower = std::ldexp(1.0, e - 1);
  const double upper = std::ldexp(1.0, e);
  const double pick = (a - lower) <= (upper - a) ? lower : upper;
  return static_cast<float>(std::copysign(pick, static_cast<double>(value)));
}

inline bool is_power_of_two_or_zero(float v) {
  if (v == 0.0f) return true;
  if (!std::isfinite(v)) return false;
  int e = 0;
  return std::frexp(std::abs(static_cast<double>(v)), &e) == 0.5;
}

inline bool has_two_significant_figures(float v) { return v == 0.0f || round_to_2sig(v) == v; }

inline bool satisfies(float v, TCentroidKind kind) {
  return kind == TCentroidKind::power_of_two ? is_power_of_two_or_zero(v) : has_two_significant_figures(v);
}

/// Typed values near `value`, nearest first. Used to pick an unused target
/// when the nearest one is already taken by another centroid of the layer.
inline std::vector<float> t_centroid_candidates(float value, TCentroidKind kind) {
  std::vector<float> out{0.0f};
  const double a = value == 0.0f ? 1e-3 : std::abs(static_cast<double>(value));
  if (kind == TCentroidKind::power_of_two) {
    int e = 0;
    std::frexp(a, &e);
    for (int z = e - 24; z <= e + 2; ++z) {
      const auto p = static_cast<float>(std::ldexp(1.0, z));
      out.push_back(p);
      out.push_back(-p);
    }
  } else {
    const int q0 = static_cast<int>(std::floor(std::log10(a)));
    for (int q = q0 - 3; q <= q0 + 1; ++q) {
      for (int d = 10; d <= 99; ++d) {
        const float p = round_to_2sig(d * std::pow(10.0, q - 1));
        out.push_back(p);
        out.push_back(-p);
      }
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  const double v = value;
  std::stable_sort(out.begin(), out.end(), [v](float x, float y) {
    const double dx = std::abs(x - v), dy = std::abs(y - v);
    return dx < dy || (dx == dy && std::abs(x) < std::abs(y));
  });
  return out;
}

}  // namespace netquant
