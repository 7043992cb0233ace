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

// Command-line front end: train, quantize, eval, inspect, report and
// make-synthetic. Exit codes: 0 ok, 1 usage or configuration, 2 runtime.
// Failures print one line to stderr:
//
//   error: code=<kind> message="<text>"

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "netquant/architectures.hpp"
#include "netquant/checkpoint.hpp"
#include "netquant/codec.hpp"
#include "netquant/dataset.hpp"
#include "netquant/quantizer.hpp"
#include "netquant/synthetic.hpp"

namespace netquant::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

inline constexpr const char* kDataRootEnv = "NETQUANT_DATA_ROOT";

struct DataOptions {
  std::string path;
  std::string format = "cifar-binary";
  std::size_t subset = 0;
  std::size_t test_subset = 0;
};

struct IoStreams {
  std::ostream& out;
  std::ostream& err;
};

// ---------------------------------------------------------------------------
// helpers

inline fs::path data_path(const DataOptions& d) {
  if (!d.path.empty()) return d.path;
  if (const char* root = std::getenv(kDataRootEnv); root && *root) return root;
  throw ConfigError(std::string("no dataset given: pass --data or set ") + kDataRootEnv);
}

inline DatasetSplit load_data(const DataOptions& d, std::uint64_t seed) {
  DatasetSplit s = load_dataset(data_path(d), parse_dataset_format(d.format));
  s.train = select_subset(s.train, d.subset, seed);
  s.test = select_subset(s.test, d.test_subset, seed + 1);
  return s;
}

inline std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

inline void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << s;
  if (!out) throw IoError("short write to " + p.string());
}

inline std::string read_text(const fs::path& p) {
  const Bytes b = read_file(p);
  return std::string(b.begin(), b.end());
}

inline ordered_json to_json(const EvalResult& r) { return {{"loss", r.loss}, {"accuracy", r.accuracy}}; }

inline EvalResult eval_from_json(const ordered_json& j) {
  return {j.at("loss").get<double>(), j.at("accuracy").get<double>()};
}

inline ordered_json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"schedule", c.schedule == LrSchedule::constant ? "constant" : "step-decay"},
          {"decay_factor", c.decay_factor},
          {"decay_interval", c.decay_interval}};
}

inline ordered_json to_json(const RoundReport& r) {
  ordered_json eq = ordered_json::array();
  for (const auto& e : r.eq)
    eq.push_back({{"layer", e.layer}, {"cluster", e.cluster}, {"eq", e.eq}, {"chosen", e.chosen}});
  ordered_json epochs = ordered_json::array();
  for (const auto& e : r.epochs)
    epochs.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"accuracy", e.accuracy}, {"learning_rate", e.learning_rate}});
  ordered_json j{{"round", r.round},
                 {"phase", r.phase},
                 {"quantized_layers", r.quantized_layers},
                 {"before", to_json(r.before)},
                 {"after_share", to_json(r.after_share)},
                 {"after", to_json(r.after)},
                 {"frozen_fraction", r.frozen_fraction},
                 {"max_target_gap", r.max_target_gap},
                 {"epochs", epochs},
                 {"eq", eq}};
  j["test"] = r.test ? to_json(*r.test) : ordered_json(nullptr);
  return j;
}

/// Flat `key = value` lines; '#' starts a comment.
inline std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(in, line)) {
    ++n;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected key = value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

/// Applies config-file values to options not given on the command line.
inline void apply_config_file(CLI::App& app, const std::string& file) {
  if (file.empty()) return;
  for (const auto& [key, value] : parse_key_values(read_text(file))) {
    CLI::Option* opt = nullptr;
    try {
      opt = app.get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
      throw ConfigError("unknown config key '" + key + "' in " + file);
    }
    if (opt->count() > 0) continue;  // command line wins
    opt->clear();
    opt->add_result(value);
    opt->run_callback();
  }
}

/// Echo of every option of a subcommand as key = value, for provenance.
inline std::string config_echo(const CLI::App& app) {
  std::ostringstream os;
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config" || opt->get_expected_min() == 0) {
      if (opt->get_expected_min() == 0 && name != "help" && !name.empty()) os << name << " = " << (opt->as<bool>() ? "true" : "false") << '\n';
      continue;
    }
    const auto results = opt->results();
    os << name << " = " << (results.empty() ? opt->get_default_str() : results.back()) << '\n';
  }
  return os.str();
}

inline Network load_network(const fs::path& model, const std::string& arch, const Shape& input, std::size_t classes,
                            std::map<std::string, std::string>* meta = nullptr) {
  const Bytes bytes = read_file(model);
  if (bytes.size() >= 4 && std::string(bytes.begin(), bytes.begin() + 4) == "NQEM") {
    if (arch.empty()) throw ConfigError("an encoded model needs --arch to rebuild the network");
    Rng rng(0);
    Network net = make_architecture(arch, rng, input, classes);
    apply_decoded(net, decode_model(bytes));
    return net;
  }
  Checkpoint ck = load_checkpoint(bytes);
  if (meta) *meta = ck.meta;
  return std::move(ck.network);
}

inline std::string round_file(std::size_t round) {
  std::ostringstream os;
  os << "round_" << std::setw(2) << std::setfill('0') << round << ".nqck";
  return os.str();
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  DataOptions data;
  std::string arch = "light-cnn";
  std::string out;
  TrainConfig train;
  std::string schedule = "step-decay";
  std::uint64_t seed = 1;
  std::size_t classes = 10;
};

inline int cmd_train(const TrainArgs& a, const std::string& echo, IoStreams io) {
  if (a.out.empty()) throw ConfigError("--out is required");
  TrainConfig tc = a.train;
  tc.schedule = a.schedule == "constant" ? LrSchedule::constant : LrSchedule::step_decay;
  if (a.schedule != "constant" && a.schedule != "step-decay") throw ConfigError("unknown schedule '" + a.schedule + "'");
  tc.validate();
  const DatasetSplit data = load_data(a.data, a.seed);
  Rng rng = Rng::derive(a.seed, 0x7EA1u);
  Network net = make_architecture(a.arch, rng, data.train.sample_shape(), a.classes);
  fs::create_directories(a.out);
  ordered_json rows = ordered_json::array();
  train(net, data.train, tc, rng, [&](const EpochRow& r) {
    const EvalResult t = evaluate(net, data.test);
    io.out << "epoch " << r.epoch << " loss " << fixed(r.loss, 4) << " acc " << fixed(r.accuracy, 4) << " test_acc "
           << fixed(t.accuracy, 4) << '\n';
    rows.push_back({{"epoch", r.epoch},
                    {"loss", r.loss},
                    {"accuracy", r.accuracy},
                    {"learning_rate", r.learning_rate},
                    {"test", to_json(t)}});
  });
  const EvalResult tr = evaluate(net, data.train);
  const EvalResult te = evaluate(net, data.test);
  write_checkpoint(fs::path(a.out) / "baseline.nqck", net,
                   {{"arch", a.arch}, {"classes", std::to_string(a.classes)}, {"seed", std::to_string(a.seed)}});
  ordered_json j{{"command", "train"},
                 {"arch", a.arch},
                 {"seed", a.seed},
                 {"train_samples", data.train.size()},
                 {"test_samples", data.test.size()},
                 {"train_config", to_json(tc)},
                 {"epochs", rows},
                 {"final_train", to_json(tr)},
                 {"final_test", to_json(te)}};
  write_text(fs::path(a.out) / "train.json", j.dump(2) + "\n");
  write_text(fs::path(a.out) / "config.txt", echo);
  io.out << "baseline test accuracy " << fixed(te.accuracy, 4) << ", checkpoint " << (fs::path(a.out) / "baseline.nqck").string()
         << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// quantize

struct QuantizeArgs {
  DataOptions data;
  std::string model;
  std::string out;
  std::string mode = "slq";
  int bits = 5;
  std::string plan;
  std::string eq = "loss";
  std::uint64_t seed = 1;
  std::string t_centroid = "power-of-two";
  double beta = 1.0;
  bool zero_heart = true;
  bool heart_nearest = true;
  std::string init = "exponential";
  std::size_t calibration = 256;
  TrainConfig retrain;
  std::string schedule = "constant";
  bool resume = false;
};

inline QuantConfig make_quant_config(const QuantizeArgs& a) {
  QuantConfig c;
  c.mode = parse_quant_mode(a.mode);
  c.bits = a.bits;
  if (!a.plan.empty()) c.plan = PartitionPlan::parse(a.plan);
  c.eq = parse_eq_estimator(a.eq);
  c.seed = a.seed;
  c.zero_heart = a.zero_heart;
  c.heart_nearest = a.heart_nearest;
  if (a.init == "linear") {
    c.init = InitMode::linear;
  } else if (a.init == "exponential") {
    c.init = InitMode::exponential;
  } else {
    throw ConfigError("unknown init mode '" + a.init + "'");
  }
  if (c.mode == QuantMode::eslq) {
    TCentroidSpec s;
    if (a.t_centroid == "power-of-two") {
      s.kind = TCentroidKind::power_of_two;
    } else if (a.t_centroid == "scientific-2sig") {
      s.kind = TCentroidKind::scientific_2sig;
    } else {
      throw ConfigError("unknown t-centroid kind '" + a.t_centroid + "'");
    }
    s.beta = a.beta;
    c.t_centroid = s;
  }
  c.calibration_size = a.calibration;
  c.retrain = a.retrain;
  if (a.schedule != "constant" && a.schedule != "step-decay") throw ConfigError("unknown schedule '" + a.schedule + "'");
  c.retrain.schedule = a.schedule == "constant" ? LrSchedule::constant : LrSchedule::step_decay;
  return c;
}

inline std::string metrics_table(const std::string& arch, const QuantState& st, const EvalResult& base,
                                 const EvalResult& quant) {
  std::ostringstream os;
  os << "| Network | Bit-width | Accuracy | Increase |\n";
  os << "|---|---|---|---|\n";
  os << "| " << arch << " (float) | 32 | " << fixed(100.0 * base.accuracy, 2) << "% | - |\n";
  const double inc = 100.0 * (quant.accuracy - base.accuracy);
  os << "| " << arch << " (" << to_string(st.mode) << ") | " << st.bits
     << (st.mode == QuantMode::mlq ? " (ternary)" : "") << " | " << fixed(100.0 * quant.accuracy, 2) << "% | "
     << (inc >= 0 ? "+" : "") << fixed(inc, 2) << "% |\n";
  return os.str();
}

inline ordered_json manifest_json(const QuantizeArgs& a, const QuantConfig& cfg, const std::string& arch,
                                  const QuantState& st, const ordered_json& rounds) {
  const auto& h = st.history;
  ordered_json j{{"command", "quantize"},
                 {"arch", arch},
                 {"mode", to_string(cfg.mode)},
                 {"bits", cfg.bits},
                 {"clusters_per_layer", cfg.cluster_count()},
                 {"eq_estimator", cfg.eq == EqEstimator::loss_delta ? "loss-delta on a seeded calibration batch"
                                                                     : "sse proxy"},
                 {"calibration_samples", cfg.calibration_size},
                 {"plan", h.plan.to_string()},
                 {"zero_heart", cfg.zero_heart},
                 {"heart_nearest", cfg.heart_nearest},
                 {"seed", cfg.seed},
                 {"retrain", to_json(cfg.retrain)}};
  if (cfg.t_centroid)
    j["t_centroid"] = {{"kind", to_string(cfg.t_centroid->kind)}, {"beta", cfg.t_centroid->beta}};
  if (cfg.mode == QuantMode::mlq)
    j["notes"] = {"Boundaries phase rounds come first, then Hearts phase rounds.",
                  "Retraining in the Hearts phase updates only the not yet shared Heart weights; shared Boundaries "
                  "stay frozen.",
                  cfg.heart_nearest ? "Sharing a Heart snaps each free weight of the layer to its nearest centroid."
                                    : "Sharing a Heart moves every free weight of the layer onto the heart value."};
  j["baseline"] = {{"train", to_json(h.baseline)},
                   {"test", h.baseline_test ? to_json(*h.baseline_test) : ordered_json(nullptr)}};
  j["rounds"] = rounds;
  (void)a;
  return j;
}

inline int cmd_quantize(const QuantizeArgs& a, const std::string& echo, IoStreams io) {
  if (a.out.empty()) throw ConfigError("--out is required");
  const QuantConfig cfg = make_quant_config(a);
  const fs::path out(a.out);
  fs::create_directories(out);

  std::map<std::string, std::string> meta;
  std::optional<QuantState> resume;
  ordered_json rounds = ordered_json::array();
  ordered_json baseline_json;
  Network net;
  std::string arch;
  if (a.resume) {
    std::size_t last = 0;
    bool found = false;
    for (std::size_t r = 0; fs::exists(out / round_file(r)); ++r) {
      last = r;
      found = true;
    }
    if (!found) throw IoError("nothing to resume in " + out.string());
    Checkpoint ck = read_checkpoint(out / round_file(last));
    net = std::move(ck.network);
    meta = ck.meta;
    arch = meta["arch"];
    if (meta["mode"] != to_string(cfg.mode) || meta["bits"] != std::to_string(cfg.bits))
      throw ConfigError("resume checkpoint was written with a different mode or bit-width");
    resume = state_from_network(net, cfg.mode, cfg.bits, cfg.cluster_count(), last + 1);
    const ordered_json prev = ordered_json::parse(read_text(out / "manifest.json"));
    for (const auto& r : prev.at("rounds"))
      if (r.at("round").get<std::size_t>() <= last) rounds.push_back(r);
    baseline_json = prev.at("baseline");
    resume->history.baseline = eval_from_json(baseline_json.at("train"));
    if (!baseline_json.at("test").is_null()) resume->history.baseline_test = eval_from_json(baseline_json.at("test"));
    resume->history.plan = cfg.mode == QuantMode::mlq ? cfg.layer_plan(resume->layers.size()) : cfg.cluster_plan();
    resume->history.mode = cfg.mode;
    resume->history.bits = cfg.bits;
    io.out << "resuming after round " << last << '\n';
  } else {
    if (a.model.empty()) throw ConfigError("--model is required");
    Checkpoint ck = read_checkpoint(a.model);
    net = std::move(ck.network);
    arch = ck.meta.count("arch") ? ck.meta.at("arch") : "unknown";
  }
  const DatasetSplit data = load_data(a.data, a.seed);

  RunHooks hooks;
  hooks.test = &data.test;
  hooks.log = [&](const std::string& s) { io.out << s << '\n'; };
  hooks.on_round = [&](const Network& n, const QuantState& st) {
    const RoundReport& r = st.history.rounds.back();
    rounds.push_back(to_json(r));
    write_checkpoint(out / round_file(r.round), n,
                     {{"arch", arch},
                      {"mode", to_string(cfg.mode)},
                      {"bits", std::to_string(cfg.bits)},
                      {"round", std::to_string(r.round)},
                      {"phase", r.phase}});
    write_text(out / "manifest.json", manifest_json(a, cfg, arch, st, rounds).dump(2) + "\n");
  };
  write_text(out / "config.txt", echo);
  const QuantState st = run_quantization(net, data.train, cfg, hooks, std::move(resume));

  const auto violations = verify_quantized(net, st);
  if (!violations.empty()) {
    throw StateError("verification failed with " + std::to_string(violations.size()) + " violations, first at layer " +
                     std::to_string(violations.front().layer) + ": " + violations.front().reason);
  }
  const Bytes encoded = encode_model(net, st, cfg.bits);
  write_file(out / "model.nqm", encoded);

  std::vector<EqRecord> eq_rows;
  for (const auto& r : rounds)
    for (const auto& e : r.at("eq"))
      eq_rows.push_back({r.at("round").get<std::size_t>(), e.at("layer").get<std::size_t>(),
                         e.at("cluster").get<std::string>(), e.at("eq").get<double>(), e.at("chosen").get<bool>()});
  write_text(out / "eq.csv", eq_csv(eq_rows));

  const EvalResult quant = evaluate(net, data.test);
  const EvalResult base = st.history.baseline_test.value_or(quant);
  std::ostringstream table;
  table << metrics_table(arch, st, base, quant) << '\n';
  table << "compression " << format_ratio(compression_ratio(net, cfg.bits, false)) << "x indices only, "
        << format_ratio(compression_ratio(net, cfg.bits, true)) << "x with codebooks, " << encoded.size()
        << " bytes encoded\n";
  write_text(out / "metrics.md", table.str());

  ordered_json manifest = manifest_json(a, cfg, arch, st, rounds);
  manifest["final"] = {{"test", to_json(quant)},
                       {"violations", violations.size()},
                       {"encoded_bytes", encoded.size()},
                       {"encoded_crc32", crc32_of(encoded)},
                       {"compression_ratio", compression_ratio(net, cfg.bits, false)},
                       {"compression_ratio_with_codebooks", compression_ratio(net, cfg.bits, true)}};
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  io.out << table.str();
  return 0;
}

// ---------------------------------------------------------------------------
// eval / inspect / report / make-synthetic

struct EvalArgs {
  DataOptions data;
  std::string model;
  std::string arch;
  std::uint64_t seed = 1;
  std::size_t classes = 10;
};

inline int cmd_eval(const EvalArgs& a, IoStreams io) {
  if (a.model.empty()) throw ConfigError("--model is required");
  const DatasetSplit data = load_data(a.data, a.seed);
  const Network net = load_network(a.model, a.arch, data.test.sample_shape(), a.classes);
  const EvalResult tr = evaluate(net, data.train);
  const EvalResult te = evaluate(net, data.test);
  io.out << "train loss " << fixed(tr.loss, 6) << " accuracy " << fixed(tr.accuracy, 4) << '\n';
  io.out << "test loss " << fixed(te.loss, 6) << " accuracy " << fixed(te.accuracy, 4) << '\n';
  return 0;
}

inline int cmd_inspect(const std::string& file, IoStreams io) {
  const Bytes bytes = read_file(file);
  if (bytes.size() >= 4 && std::string(bytes.begin(), bytes.begin() + 4) == "NQEM") {
    io.out << describe(decode_model(bytes), bytes.size());
    return 0;
  }
  const Checkpoint ck = load_checkpoint(bytes);
  io.out << "format NQCK v" << kCheckpointVersion << ", " << ck.network.size() << " layers, input "
         << shape_string(ck.network.input_shape()) << '\n';
  for (const auto& [k, v] : ck.meta) io.out << "  " << k << " = " << v << '\n';
  for (std::size_t i = 0; i < ck.network.size(); ++i) {
    const Layer& l = ck.network.layer(i);
    io.out << "layer " << i << " " << to_string(l.kind);
    if (l.weighted()) {
      io.out << " " << shape_string(l.weights.shape()) << " frozen " << l.mask.frozen_count() << "/" << l.mask.size();
      if (l.codebook) io.out << " codebook " << l.codebook->size() << " (" << l.codebook->frozen_count() << " frozen)";
    }
    io.out << '\n';
  }
  return 0;
}

/// Checks that every round's chosen set holds the highest EQ values of its
/// layer (or of the layer candidates for layer-wise rounds).
inline std::vector<std::string> check_eq_ordering(const ordered_json& rounds) {
  std::vector<std::string> problems;
  for (const auto& r : rounds) {
    const std::string phase = r.at("phase").get<std::string>();
    const bool layerwise = phase == "boundaries" || phase == "hearts";
    std::map<std::size_t, std::pair<double, double>> span;  // key -> (min chosen, max retrained)
    std::vector<std::size_t> chosen_layers;
    for (const auto& e : r.at("eq")) {
      const std::size_t key = layerwise ? 0 : e.at("layer").get<std::size_t>();
      auto& s = span.try_emplace(key, std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity())
                    .first->second;
      const double v = e.at("eq").get<double>();
      if (e.at("chosen").get<bool>()) {
        s.first = std::min(s.first, v);
        if (layerwise) chosen_layers.push_back(e.at("layer").get<std::size_t>());
      } else {
        s.second = std::max(s.second, v);
      }
    }
    for (const auto& [key, s] : span)
      if (s.first < s.second)
        problems.push_back("round " + std::to_string(r.at("round").get<std::size_t>()) + (layerwise ? "" : " layer " + std::to_string(key)) +
                           ": a retrained candidate has a higher EQ than a quantized one");
    if (layerwise) {
      std::sort(chosen_layers.begin(), chosen_layers.end());
      if (chosen_layers != r.at("quantized_layers").get<std::vector<std::size_t>>())
        problems.push_back("round " + std::to_string(r.at("round").get<std::size_t>()) +
                           ": EQ table and quantized layer list disagree");
    }
  }
  return problems;
}

inline int cmd_report(const std::string& dir, IoStreams io) {
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  if (!fs::exists(manifest_path)) throw IoError("no manifest.json in " + dir);
  const ordered_json m = ordered_json::parse(read_text(manifest_path));
  const auto& rounds = m.at("rounds");
  std::ostringstream curve;
  curve << std::setprecision(9);
  curve << "round,phase,loss_before,loss_after_share,loss_after_retrain,test_accuracy,frozen_fraction\n";
  const auto& b = m.at("baseline");
  const double base_test = b.at("test").is_null() ? NAN : b.at("test").at("accuracy").get<double>();
  curve << "baseline,float," << b.at("train").at("loss").get<double>() << ',' << b.at("train").at("loss").get<double>()
        << ',' << b.at("train").at("loss").get<double>() << ',' << base_test << ",0\n";
  for (const auto& r : rounds) {
    curve << r.at("round").get<std::size_t>() << ',' << r.at("phase").get<std::string>() << ','
          << r.at("before").at("loss").get<double>() << ',' << r.at("after_share").at("loss").get<double>() << ','
          << r.at("after").at("loss").get<double>() << ','
          << (r.at("test").is_null() ? NAN : r.at("test").at("accuracy").get<double>()) << ','
          << r.at("frozen_fraction").get<double>() << '\n';
  }
  std::vector<EqRecord> eq_rows;
  for (const auto& r : rounds)
    for (const auto& e : r.at("eq"))
      eq_rows.push_back({r.at("round").get<std::size_t>(), e.at("layer").get<std::size_t>(),
                         e.at("cluster").get<std::string>(), e.at("eq").get<double>(), e.at("chosen").get<bool>()});
  write_text(fs::path(dir) / "report_curve.csv", curve.str());
  write_text(fs::path(dir) / "report_eq.csv", eq_csv(eq_rows));
  io.out << "# accuracy and loss per round\n" << curve.str();
  io.out << "# EQ tables: " << eq_rows.size() << " rows in report_eq.csv\n";
  if (m.contains("final")) {
    const auto& f = m.at("final");
    io.out << "# compression " << format_ratio(f.at("compression_ratio").get<double>()) << "x indices only, "
           << format_ratio(f.at("compression_ratio_with_codebooks").get<double>()) << "x with codebooks\n";
  }
  const auto problems = check_eq_ordering(rounds);
  if (!problems.empty()) throw StateError("EQ ordering check failed: " + problems.front());
  io.out << "# EQ ordering consistent with the partitions used\n";
  return 0;
}

struct SyntheticArgs {
  std::string out;
  std::size_t train = 5000;
  std::size_t test = 2000;
  std::uint64_t seed = 7;
};

inline int cmd_make_synthetic(const SyntheticArgs& a, IoStreams io) {
  if (a.out.empty()) throw ConfigError("--out is required");
  write_synthetic_cifar(a.out, a.train, a.test, a.seed);
  io.out << "wrote " << a.train << " training and " << a.test << " test records to " << a.out << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// entry point

inline void add_data_options(CLI::App* app, DataOptions& d) {
  app->add_option("--data", d.path, std::string("dataset file or directory (default: $") + kDataRootEnv + ")");
  app->add_option("--format", d.format, "cifar-binary or idx")->capture_default_str();
  app->add_option("--subset", d.subset, "cap on training samples (0 = all)")->capture_default_str();
  app->add_option("--test-subset", d.test_subset, "cap on test samples (0 = all)")->capture_default_str();
}

inline void add_train_options(CLI::App* app, TrainConfig& t, std::string& schedule, const std::string& prefix) {
  app->add_option("--" + prefix + "epochs", t.epochs)->capture_default_str();
  app->add_option("--" + prefix + "lr", t.learning_rate)->capture_default_str();
  app->add_option("--" + prefix + "momentum", t.momentum)->capture_default_str();
  app->add_option("--" + prefix + "weight-decay", t.weight_decay)->capture_default_str();
  app->add_option("--" + prefix + "batch", t.batch_size)->capture_default_str();
  app->add_option("--" + prefix + "schedule", schedule, "constant or step-decay")->capture_default_str();
  app->add_option("--" + prefix + "decay-factor", t.decay_factor)->capture_default_str();
  app->add_option("--" + prefix + "decay-interval", t.decay_interval)->capture_default_str();
}

inline void print_error(std::ostream& err, const std::string& code, std::string msg) {
  std::replace(msg.begin(), msg.end(), '\n', ' ');
  std::replace(msg.begin(), msg.end(), '"', '\'');
  err << "error: code=" << code << " message=\"" << msg << "\"\n";
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  IoStreams io{out, err};
  CLI::App app{"netquant: iterative loss-aware network quantization"};
  app.require_subcommand(1);

  TrainArgs ta;
  std::string ta_config;
  auto* train_cmd = app.add_subcommand("train", "train a float baseline");
  add_data_options(train_cmd, ta.data);
  train_cmd->add_option("--arch", ta.arch, "light-cnn, mlp or resnet20-lite")->capture_default_str();
  train_cmd->add_option("--out", ta.out, "output directory");
  train_cmd->add_option("--seed", ta.seed)->capture_default_str();
  train_cmd->add_option("--classes", ta.classes)->capture_default_str();
  ta.train.epochs = 12;
  ta.train.decay_interval = 8;
  add_train_options(train_cmd, ta.train, ta.schedule, "");
  train_cmd->add_option("--config", ta_config, "key = value file; flags override it");

  QuantizeArgs qa;
  std::string qa_config;
  auto* quant_cmd = app.add_subcommand("quantize", "quantize a trained checkpoint");
  add_data_options(quant_cmd, qa.data);
  quant_cmd->add_option("--model", qa.model, "baseline checkpoint");
  quant_cmd->add_option("--out", qa.out, "run directory");
  quant_cmd->add_option("--mode", qa.mode, "slq, eslq or mlq")->capture_default_str();
  quant_cmd->add_option("--bits", qa.bits)->capture_default_str();
  quant_cmd->add_option("--plan", qa.plan, "per-round counts, e.g. 5,4,4,2,2");
  quant_cmd->add_option("--eq", qa.eq, "loss or sse")->capture_default_str();
  quant_cmd->add_option("--seed", qa.seed)->capture_default_str();
  quant_cmd->add_option("--t-centroid", qa.t_centroid, "power-of-two or scientific-2sig")->capture_default_str();
  quant_cmd->add_option("--beta", qa.beta)->capture_default_str();
  quant_cmd->add_option("--zero-heart", qa.zero_heart)->capture_default_str();
  quant_cmd->add_option("--heart-nearest", qa.heart_nearest, "mlq hearts snap to the nearest centroid")
      ->capture_default_str();
  quant_cmd->add_option("--init", qa.init, "exponential or linear")->capture_default_str();
  quant_cmd->add_option("--calibration", qa.calibration)->capture_default_str();
  qa.retrain.learning_rate = 0.001;
  qa.retrain.epochs = 2;
  add_train_options(quant_cmd, qa.retrain, qa.schedule, "retrain-");
  quant_cmd->add_flag("--resume", qa.resume, "continue from the last round checkpoint in --out");
  quant_cmd->add_option("--config", qa_config, "key = value file; flags override it");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint or encoded model");
  add_data_options(eval_cmd, ea.data);
  eval_cmd->add_option("--model", ea.model);
  eval_cmd->add_option("--arch", ea.arch, "architecture of an encoded model");
  eval_cmd->add_option("--seed", ea.seed)->capture_default_str();
  eval_cmd->add_option("--classes", ea.classes)->capture_default_str();

  std::string inspect_file;
  auto* inspect_cmd = app.add_subcommand("inspect", "dump an encoded model or checkpoint");
  inspect_cmd->add_option("file", inspect_file)->required();

  std::string report_dir;
  auto* report_cmd = app.add_subcommand("report", "summarize a quantization run directory");
  report_cmd->add_option("dir", report_dir)->required();

  SyntheticArgs sa;
  auto* synth_cmd = app.add_subcommand("make-synthetic", "write a seeded synthetic cifar-binary dataset");
  synth_cmd->add_option("--out", sa.out);
  synth_cmd->add_option("--train", sa.train)->capture_default_str();
  synth_cmd->add_option("--test", sa.test)->capture_default_str();
  synth_cmd->add_option("--seed", sa.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    print_error(err, "usage", e.what());
    return 1;
  }

  try {
    if (train_cmd->parsed()) {
      apply_config_file(*train_cmd, ta_config);
      return cmd_train(ta, config_echo(*train_cmd), io);
    }
    if (quant_cmd->parsed()) {
      apply_config_file(*quant_cmd, qa_config);
      return cmd_quantize(qa, config_echo(*quant_cmd), io);
    }
    if (eval_cmd->parsed()) return cmd_eval(ea, io);
    if (inspect_cmd->parsed()) return cmd_inspect(inspect_file, io);
    if (report_cmd->parsed()) return cmd_report(report_dir, io);
    if (synth_cmd->parsed()) return cmd_make_synthetic(sa, io);
  } catch (const ConfigError& e) {
    print_error(err, e.code(), e.what());
    return 1;
  } catch (const CLI::ParseError& e) {
    print_error(err, "usage", e.what());
    return 1;
  } catch (const Error& e) {
    print_error(err, e.code(), e.what());
    return 2;
  } catch (const nlohmann::json::exception& e) {
    print_error(err, "format", e.what());
    return 2;
  } catch (const std::exception& e) {
    print_error(err, "internal", e.what());
    return 2;
  }
  return 1;
}

}  // namespace netquant::cli
