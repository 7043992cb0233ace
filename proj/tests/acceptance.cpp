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

// Acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero
// when any criterion fails. The end-to-end part trains light-cnn on a
// 5,000-sample CIFAR-10 subset from $NETQUANT_DATA_ROOT, or on the seeded
// synthetic stand-in when no data is available.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>

#include "reference.hpp"

namespace {

using namespace netquant;
using namespace nqtest;
using Clock = std::chrono::steady_clock;

int g_failed = 0;
int g_total = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
  ++g_total;
  if (!ok) ++g_failed;
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

std::string fmt(const char* f, double a, double b, double c) {
  char buf[200];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// ---------------------------------------------------------------------------

void check_centroid_counts() {
  const bool ok = centroid_count(5) == 17 && centroid_count(4) == 9 && centroid_count(3) == 5 && centroid_count(2) == 3;
  report("centroid-count", ok,
         "b=5,4,3,2 -> " + std::to_string(centroid_count(5)) + "," + std::to_string(centroid_count(4)) + "," +
             std::to_string(centroid_count(3)) + "," + std::to_string(centroid_count(2)));
}

void check_compression() {
  const std::vector<std::size_t> any{4096, 1000, 17};
  const double r5 = compression_ratio(any, 5, false), r2 = compression_ratio(any, 2, false);
  const double alex = compression_ratio(alexnet_layer_sizes(), 5, true);
  report("compression-ratio", r5 == 6.4 && r2 == 16.0 && std::lround(alex) == 6,
         "b=5 " + format_ratio(r5) + ", b=2 " + format_ratio(r2) + ", AlexNet-shaped b=5 with codebooks " +
             format_ratio(alex));
}

void check_partition() {
  Rng rng(101);
  std::size_t bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    const std::size_t count = 1 + rng.below(n);
    // coarse values so ties are common
    std::vector<double> eq(n);
    for (auto& e : eq) e = trial % 2 ? rng.normal() : static_cast<double>(rng.below(5)) - 2.0;
    std::vector<ClusterLoss> cl;
    std::vector<LayerLoss> ll;
    for (std::size_t i = 0; i < n; ++i) {
      cl.push_back({0, i, eq[i]});
      ll.push_back({i, eq[i]});
    }
    for (const Split& s : {loss_based_partition(cl, count), ilc_partition(ll, count)}) {
      std::set<std::size_t> q(s.quantize.begin(), s.quantize.end()), r(s.retrain.begin(), s.retrain.end());
      bool ok = q.size() == s.quantize.size() && r.size() == s.retrain.size() && q.size() == count &&
                q.size() + r.size() == n;
      for (std::size_t i : q) ok = ok && !r.count(i) && i < n;
      for (std::size_t i : r) ok = ok && i < n;
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (std::size_t i : q) lo = std::min(lo, eq[i]);
      for (std::size_t i : r) hi = std::max(hi, eq[i]);
      ok = ok && lo >= hi;
      bad += !ok;
    }
  }
  report("partition-ordering", bad == 0, "1000 randomized EQ vectors x 2 partitioners, " + std::to_string(bad) + " violations");
}

// Objective of a k-means result recomputed from scratch, with constraints
// given per initial centroid.
double recomputed_objective(std::span<const float> w, const KMeansResult& r,
                            const std::vector<std::optional<CentroidConstraint>>& cons) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = static_cast<double>(w[i]) - r.codebook.centroid(r.assignment[i]);
    s += d * d;
  }
  if (cons.empty()) return s;
  s /= static_cast<double>(w.size());
  for (std::size_t j = 0; j < cons.size(); ++j)
    if (cons[j]) s += cons[j]->beta * std::abs(r.codebook.centroid(r.init_to_codebook[j]) - cons[j]->target);
  return s;
}

void check_lloyd() {
  const auto t0 = Clock::now();
  Rng rng(202);
  std::size_t bad = 0, steps = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 1 + rng.below(17);
    const std::size_t n = k + rng.below(1000 - k + 1);
    std::vector<float> w(n);
    const std::size_t modes = 1 + rng.below(6);
    for (auto& v : w) v = static_cast<float>(rng.normal(static_cast<double>(rng.below(modes)) - 2.0, 0.3));
    // initialisation needs k >= 2; a single cluster starts from any weight
    const auto init = k == 1 ? std::vector<float>{w[0]}
                             : init_centroids(w, k, trial % 2 ? InitMode::linear : InitMode::exponential);
    std::vector<std::optional<CentroidConstraint>> cons;
    if (trial % 2 == 0) {
      cons.resize(init.size());
      for (std::size_t j = 0; j < init.size(); ++j)
        if (rng.below(2)) cons[j] = CentroidConstraint{t_centroid(init[j], TCentroidKind::power_of_two), rng.uniform(0.0, 0.05)};
    }
    const auto full = constrained_kmeans(w, init, cons, 50);
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t <= full.iterations; ++t) {
      const auto r = constrained_kmeans(w, init, cons, t);
      const double obj = recomputed_objective(w, r, cons);
      bad += obj > prev;
      prev = obj;
      ++steps;
    }
    for (std::size_t t = 1; t < full.objective.size(); ++t) bad += full.objective[t] > full.objective[t - 1];
  }
  const double s = seconds_since(t0);
  report("lloyd-monotonicity", bad == 0 && s < 10.0,
         "100 instances (50 constrained), " + std::to_string(steps) + " iterations, " + std::to_string(bad) +
             " increases, " + fmt("%.2f s", s));
}

void check_soft_threshold() {
  const auto t0 = Clock::now();
  Rng rng(303);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(50);
    const std::size_t n_total = n + rng.below(200);
    std::vector<float> v(n);
    const double centre = rng.uniform(-0.5, 0.5);
    for (auto& x : v) x = static_cast<float>(centre + rng.normal(0.0, 0.1));
    const double target = centre + rng.uniform(-0.3, 0.3);
    const double beta = rng.uniform(0.0, 2.0) * (trial % 4 == 0 ? 0.01 : 1.0);
    double lo = target, hi = target;
    for (float x : v) {
      lo = std::min(lo, static_cast<double>(x));
      hi = std::max(hi, static_cast<double>(x));
    }
    double best_c = lo, best = std::numeric_limits<double>::infinity();
    for (double c = lo - 0.01; c <= hi + 0.01; c += 1e-4) {
      double f = 0.0;
      for (float x : v) f += (x - c) * (x - c);
      f = f / static_cast<double>(n_total) + beta * std::abs(c - target);
      if (f < best) {
        best = f;
        best_c = c;
      }
    }
    worst = std::max(worst, std::abs(centroid_update_l1(v, target, beta, n_total) - best_c));
  }
  const double s = seconds_since(t0);
  report("soft-threshold-oracle", worst <= 2e-4 && s < 5.0,
         "200 instances, max |closed form - grid argmin| " + fmt("%.2e", worst) + ", " + fmt("%.2f s", s));
}

void check_masked_sgd() {
  Rng rng(404);
  Network net = mlp({10}, {16, 12}, 4);
  he_initialize(net, rng);
  for (std::size_t li : net.weighted_layers()) {
    Layer& l = net.layer(li);
    for (std::size_t i = 0; i < l.mask.size(); ++i) l.mask.set(i, rng.below(2) == 1);
  }
  const Network before = net;
  const Dataset d = random_dataset(64, {10}, 4, rng);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  SgdState state(net);
  for (int step = 0; step < 100; ++step) {
    std::vector<std::size_t> idx;
    for (int b = 0; b < 16; ++b) idx.push_back(rng.below(d.size()));
    const Dataset batch = d.subset(idx);
    sgd_step_masked(net, backward(net, batch.images, batch.labels), cfg, state, cfg.learning_rate);
  }
  std::size_t masked = 0, masked_moved = 0, free = 0, free_moved = 0;
  for (std::size_t li : net.weighted_layers()) {
    const Layer& a = before.layer(li);
    const Layer& b = net.layer(li);
    for (std::size_t i = 0; i < a.weights.size(); ++i) {
      const bool moved = std::bit_cast<std::uint32_t>(a.weights[i]) != std::bit_cast<std::uint32_t>(b.weights[i]);
      if (a.mask.trainable(i)) {
        ++free;
        free_moved += moved;
      } else {
        ++masked;
        masked_moved += moved;
      }
    }
  }
  report("masked-retraining", masked_moved == 0 && free_moved == free,
         std::to_string(masked) + " masked weights, " + std::to_string(masked_moved) + " changed; " +
             std::to_string(free_moved) + "/" + std::to_string(free) + " unmasked changed after 100 steps");
}

void check_gradients() {
  std::string detail;
  bool all = true;
  for (std::size_t c = 0; c < grad_cases().size(); ++c) {
    std::size_t checked = 0, skipped = 0, failed = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto r = run_grad_case(c, seed);
      checked += r.checked;
      skipped += r.skipped;
      failed += r.failures.size();
      all = all && r.ok();
    }
    detail += std::string(c ? "; " : "") + grad_cases()[c].name + " " + std::to_string(checked) + " checked/" +
              std::to_string(failed) + " off/" + std::to_string(skipped) + " kink-skipped";
  }
  report("gradient-check", all, "5 seeds per kind: " + detail);
}

void check_codec() {
  const auto t0 = Clock::now();
  Rng rng(505);
  std::size_t mismatches = 0;
  Bytes sample;
  for (int trial = 0; trial < 50; ++trial) {
    const int bits = 2 + static_cast<int>(rng.below(5));
    Network net = trial % 2 ? mlp({4}, {6}, 3)
                            : Network({2, 6, 6}, {Layer::conv2d(2, 3, 3, 1, 1), Layer::relu(), Layer::dense(108, 4),
                                                  Layer::softmax_loss()});
    const auto st = quantize_randomly(net, bits, rng, rng.below(2) == 0);
    const Bytes b = encode_model(net, st, bits);
    Network copy = net;
    for (std::size_t li : copy.weighted_layers()) copy.layer(li).weights.fill(0.0f);
    apply_decoded(copy, decode_model(b));
    mismatches += !same_parameters(net, copy);
    if (trial == 1) sample = b;
  }
  std::size_t crashes_avoided = 0, decoded = 0;
  for (int trial = 0; trial < 5000; ++trial) {
    Bytes b = sample;
    const std::size_t flips = 1 + rng.below(4);
    for (std::size_t f = 0; f < flips; ++f) b[rng.below(b.size())] = static_cast<std::uint8_t>(rng.below(256));
    if (trial % 7 == 0) b.resize(rng.below(b.size() + 16), 0xA5);
    if (trial % 2 == 0 && b.size() >= 4) {
      const std::size_t body = b.size() - 4;
      const auto crc = crc32_of(std::span<const std::uint8_t>(b).first(body));
      for (int s = 0; s < 4; ++s) b[body + s] = static_cast<std::uint8_t>(crc >> (8 * s));
    }
    try {
      decode_model(b);
      ++decoded;
    } catch (const FormatError&) {
      ++crashes_avoided;
    }
  }
  const double s = seconds_since(t0);
  report("codec", mismatches == 0 && s < 10.0,
         "50 roundtrips, " + std::to_string(mismatches) + " mismatches; 5000 fuzzed streams: " +
             std::to_string(crashes_avoided) + " format errors, " + std::to_string(decoded) + " decoded, no crash; " +
             fmt("%.2f s", s));
}

// ---------------------------------------------------------------------------
// end to end

struct Data {
  DatasetSplit split;
  std::string source;
};

Data load_data() {
  Data d;
  const char* root = std::getenv("NETQUANT_DATA_ROOT");
  if (root && *root) {
    namespace fs = std::filesystem;
    for (const fs::path p : {fs::path(root), fs::path(root) / "cifar-10-batches-bin"}) {
      std::error_code ec;
      if (!fs::is_directory(p, ec) || !fs::exists(p / "test_batch.bin", ec)) continue;
      d.split = load_dataset(p, DatasetFormat::cifar_binary);
      d.split.train = select_subset(d.split.train, 5000, 7);
      d.split.test = select_subset(d.split.test, 2000, 8);
      d.source = "CIFAR-10 from " + p.string() + " (5000 train / 2000 test subset)";
      return d;
    }
  }
  d.split.train = parse_cifar(synthetic_cifar(5000, 7, 1));
  d.split.test = parse_cifar(synthetic_cifar(2000, 7, 2));
  d.source = "synthetic stand-in (no CIFAR-10 under $NETQUANT_DATA_ROOT), 5000 train / 2000 test";
  return d;
}

std::size_t max_distinct_per_layer(const Network& net) {
  std::size_t worst = 0;
  for (std::size_t li : net.weighted_layers()) {
    std::set<std::uint32_t> s;
    for (float v : net.layer(li).weights.values()) s.insert(std::bit_cast<std::uint32_t>(v));
    worst = std::max(worst, s.size());
  }
  return worst;
}

struct Completeness {
  std::size_t violations = 0;
  double worst_seconds = 0.0;
  std::string runs;
  void add(const std::string& name, const Network& net, const QuantState& st) {
    const auto t0 = Clock::now();
    const auto v = verify_quantized(net, st);
    worst_seconds = std::max(worst_seconds, seconds_since(t0));
    violations += v.size();
    runs += (runs.empty() ? "" : ", ") + name + " " + std::to_string(v.size());
  }
};

QuantConfig e2e_config(QuantMode mode, int bits) {
  QuantConfig c;
  c.mode = mode;
  c.bits = bits;
  c.retrain.learning_rate = 0.001;
  c.retrain.epochs = 2;
  c.seed = 1;
  return c;
}

void end_to_end(Completeness& comp) {
  const Data data = load_data();
  std::printf("data: %s\n", data.source.c_str());
  const Dataset& train_set = data.split.train;
  const Dataset& test_set = data.split.test;

  auto t0 = Clock::now();
  Rng rng(42);
  Network base = make_architecture("light-cnn", rng);
  TrainConfig tc;
  tc.learning_rate = 0.01;
  tc.epochs = 12;
  tc.schedule = LrSchedule::step_decay;
  tc.decay_interval = 8;
  train(base, train_set, tc, rng);
  const double baseline = evaluate(base, test_set).accuracy;
  std::printf("baseline: light-cnn float test accuracy %.2f%% (%.0f s)\n", 100 * baseline, seconds_since(t0));
  RunHooks hooks;
  hooks.test = &test_set;

  // SLQ
  {
    t0 = Clock::now();
    Network net = base;
    auto cfg = e2e_config(QuantMode::slq, 5);
    cfg.plan = PartitionPlan::parse("5,4,4,2,2");
    const auto st = run_slq(net, train_set, cfg, hooks);
    const double acc = evaluate(net, test_set).accuracy, s = seconds_since(t0);
    comp.add("slq", net, st);
    report("e2e-slq", acc >= baseline - 0.02 && s <= 1800.0,
           fmt("5-bit plan 5,4,4,2,2: test %.2f%% vs baseline %.2f%% (floor %.2f%%)", 100 * acc, 100 * baseline,
               100 * (baseline - 0.02)) +
               fmt(", %.0f s", s));
    std::string curve;
    bool recovered = true;
    for (const auto& r : st.history.rounds) {
      recovered = recovered && r.after.loss <= 1.1 * r.before.loss;
      curve += fmt(" r%.0f %.4f->%.4f", static_cast<double>(r.round), r.before.loss, r.after.loss);
    }
    report("slq-loss-recovery", recovered, "post <= 1.1 x pre training loss per round:" + curve);
  }

  // ESLQ, both value types
  for (const auto kind : {TCentroidKind::power_of_two, TCentroidKind::scientific_2sig}) {
    t0 = Clock::now();
    Network net = base;
    auto cfg = e2e_config(QuantMode::eslq, 5);
    cfg.t_centroid = TCentroidSpec{kind, 1.0};
    const auto st = run_eslq(net, train_set, cfg, hooks);
    comp.add(std::string("eslq/") + to_string(kind), net, st);
    std::size_t bad = 0, checked = 0;
    for (std::size_t li : net.weighted_layers())
      for (float v : net.layer(li).weights.values()) {
        ++checked;
        bad += kind == TCentroidKind::power_of_two ? !is_power_of_two_or_zero(v) : !has_two_significant_figures(v);
      }
    for (const auto& q : st.layers)
      for (float c : q.codebook.centroids()) bad += !satisfies(c, kind);
    report(std::string("eslq-") + to_string(kind), bad == 0,
           std::to_string(checked) + " weights checked, " + std::to_string(bad) + " off-type" +
               fmt("; test %.2f%% vs baseline %.2f%%, %.0f s", 100 * evaluate(net, test_set).accuracy, 100 * baseline,
                   seconds_since(t0)));
  }

  // MLQ
  {
    t0 = Clock::now();
    Network net = base;
    auto cfg = e2e_config(QuantMode::mlq, 2);
    // one layer per round, and a larger retrain step: ternary layers lose far more per share than 5-bit ones
    cfg.plan = PartitionPlan::parse("1,1,1,1,1,1");
    cfg.retrain.learning_rate = 0.01;
    cfg.retrain.epochs = 3;
    const auto st = run_mlq(net, train_set, cfg, hooks);
    const double acc = evaluate(net, test_set).accuracy, s = seconds_since(t0);
    comp.add("mlq", net, st);
    const std::size_t distinct = max_distinct_per_layer(net);
    report("e2e-mlq", acc >= baseline - 0.03 && distinct <= 3 && s <= 2700.0,
           fmt("ternary: test %.2f%% vs baseline %.2f%% (floor %.2f%%)", 100 * acc, 100 * baseline,
               100 * (baseline - 0.03)) +
               ", max distinct values per layer " + std::to_string(distinct) + fmt(", %.0f s", s));
  }
}

void small_runs(Completeness& comp) {
  Rng rng(606);
  const Dataset d = separable_dataset(200, 12, 4, rng);
  for (const auto mode : {QuantMode::slq, QuantMode::eslq, QuantMode::mlq}) {
    for (int bits : {2, 3, 5}) {
      if (mode == QuantMode::mlq && bits != 2) continue;
      Network net = mlp({12}, {24, 16}, 4);
      he_initialize(net, rng);
      QuantConfig cfg = e2e_config(mode, bits);
      cfg.retrain.epochs = 1;
      cfg.calibration_size = 64;
      if (mode == QuantMode::eslq) cfg.t_centroid = TCentroidSpec{};
      const auto st = run_quantization(net, d, cfg);
      comp.add(std::string("mlp/") + to_string(mode) + "/" + std::to_string(bits), net, st);
    }
  }
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  check_centroid_counts();
  check_compression();
  check_partition();
  check_lloyd();
  check_soft_threshold();
  check_masked_sgd();
  check_gradients();
  check_codec();
  Completeness comp;
  small_runs(comp);
  end_to_end(comp);
  report("quantization-completeness", comp.violations == 0 && comp.worst_seconds < 1.0,
         std::to_string(comp.violations) + " violations over " + comp.runs + fmt("; slowest check %.3f s", comp.worst_seconds));
  std::printf("%d/%d criteria passed in %.0f s\n", g_total - g_failed, g_total, seconds_since(t0));
  return g_failed == 0 ? 0 : 1;
}
