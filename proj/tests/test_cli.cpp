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

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <nlohmann/json.hpp>
#include <sstream>

#include "netquant/cli.hpp"

namespace {

using namespace netquant;
namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "netquant");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

int binary_exit(const std::string& args) {
  const int s = std::system((std::string(NETQUANT_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

class Cli : public ::testing::Test {
 protected:
  static inline fs::path root;

  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / "netquant_cli_test";
    fs::remove_all(root);
    fs::create_directories(root);
    auto r = cli({"make-synthetic", "--out", (root / "data").string(), "--train", "300", "--test", "100"});
    ASSERT_EQ(r.code, 0) << r.err;
    r = cli({"train", "--arch", "mlp", "--data", data(), "--out", base(), "--epochs", "2", "--lr", "0.01"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(root); }

  static std::string data() { return (root / "data").string(); }
  static std::string base() { return (root / "base").string(); }
  static std::string model() { return (root / "base" / "baseline.nqck").string(); }

  static Result quantize(const std::string& dir, std::initializer_list<std::string> extra = {}) {
    std::vector<std::string> a{"quantize", "--model", model(), "--data", data(), "--out", (root / dir).string(),
                               "--retrain-epochs", "1", "--calibration", "64"};
    a.insert(a.end(), extra.begin(), extra.end());
    return cli(a);
  }
};

TEST_F(Cli, TrainWritesArtifacts) {
  EXPECT_TRUE(fs::exists(root / "base" / "baseline.nqck"));
  EXPECT_TRUE(fs::exists(root / "base" / "train.json"));
  EXPECT_TRUE(fs::exists(root / "base" / "config.txt"));
  const auto r = cli({"eval", "--model", model(), "--data", data()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("test"), std::string::npos);
}

TEST_F(Cli, SlqRunAndReport) {
  const auto r = quantize("slq");
  ASSERT_EQ(r.code, 0) << r.err;
  const fs::path dir = root / "slq";
  const auto m = read_json(dir / "manifest.json");
  EXPECT_EQ(m["plan"], "5,4,4,2,2");
  EXPECT_EQ(m["rounds"].size(), 5u);
  EXPECT_EQ(m["final"]["violations"], 0);
  for (int k = 0; k < 5; ++k) EXPECT_TRUE(fs::exists(dir / cli::round_file(static_cast<std::size_t>(k))));
  EXPECT_TRUE(fs::exists(dir / "model.nqm"));
  std::ifstream md(dir / "metrics.md");
  const std::string metrics((std::istreambuf_iterator<char>(md)), {});
  EXPECT_NE(metrics.find("| Network | Bit-width | Accuracy | Increase |"), std::string::npos);

  const auto rep = cli({"report", dir.string()});
  ASSERT_EQ(rep.code, 0) << rep.err;
  // header plus baseline plus one row per round
  EXPECT_EQ(count_lines(dir / "report_curve.csv"), 1u + 5u + 1u);
  EXPECT_TRUE(fs::exists(dir / "report_eq.csv"));

  const auto ins = cli({"inspect", (dir / "model.nqm").string()});
  ASSERT_EQ(ins.code, 0) << ins.err;
  EXPECT_NE(ins.out.find("NQEM"), std::string::npos);
}

TEST_F(Cli, SameSeedGivesIdenticalModel) {
  ASSERT_EQ(quantize("det_a", {"--bits", "3"}).code, 0);
  ASSERT_EQ(quantize("det_b", {"--bits", "3"}).code, 0);
  EXPECT_EQ(read_file(root / "det_a" / "model.nqm"), read_file(root / "det_b" / "model.nqm"));
}

TEST_F(Cli, ResumeMatchesUninterruptedRun) {
  ASSERT_EQ(quantize("res_full", {"--bits", "3"}).code, 0);
  ASSERT_EQ(quantize("res_cut", {"--bits", "3"}).code, 0);
  const fs::path cut = root / "res_cut";
  const auto rounds = read_json(cut / "manifest.json")["rounds"].size();
  ASSERT_GE(rounds, 3u);
  fs::remove(cut / cli::round_file(rounds - 1));
  fs::remove(cut / cli::round_file(rounds - 2));
  fs::remove(cut / "model.nqm");
  const auto r = quantize("res_cut", {"--bits", "3", "--resume"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_file(root / "res_full" / "model.nqm"), read_file(cut / "model.nqm"));
  EXPECT_EQ(read_json(cut / "manifest.json")["rounds"].size(), rounds);
}

TEST_F(Cli, MlqManifestPhases) {
  const auto r = quantize("mlq", {"--mode", "mlq", "--bits", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = read_json(root / "mlq" / "manifest.json");
  const auto& rounds = m["rounds"];
  ASSERT_EQ(rounds.size(), 6u);  // 3 layers, one per round, two phases
  for (std::size_t i = 0; i < rounds.size(); ++i)
    EXPECT_EQ(rounds[i]["phase"], i < 3 ? "boundaries" : "hearts");
  ASSERT_EQ(cli({"report", (root / "mlq").string()}).code, 0);
}

TEST_F(Cli, EslqRun) {
  const auto r = quantize("eslq", {"--mode", "eslq", "--bits", "4", "--t-centroid", "power-of-two"});
  ASSERT_EQ(r.code, 0) << r.err;
  Checkpoint ck = read_checkpoint(root / "eslq" / cli::round_file(read_json(root / "eslq" / "manifest.json")["rounds"].size() - 1));
  for (std::size_t li : ck.network.weighted_layers())
    for (float v : ck.network.layer(li).weights.values()) ASSERT_TRUE(is_power_of_two_or_zero(v)) << v;
}

TEST_F(Cli, ConfigFileAndOverrides) {
  const fs::path cfg = root / "q.cfg";
  {
    std::ofstream f(cfg);
    f << "# quantize settings\nbits = 3\nretrain-epochs = 1\n";
  }
  const auto r = quantize("cfg", {"--config", cfg.string(), "--bits", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json(root / "cfg" / "manifest.json")["bits"], 4);
  {
    std::ofstream f(cfg);
    f << "no-such-key = 1\n";
  }
  const auto bad = quantize("cfg_bad", {"--config", cfg.string()});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("code=config"), std::string::npos);
}

TEST_F(Cli, ConfigErrorsExitOne) {
  EXPECT_EQ(quantize("e1", {"--mode", "mlq", "--bits", "3"}).code, 1);
  EXPECT_EQ(quantize("e2", {"--plan", "1,1"}).code, 1);
  EXPECT_EQ(quantize("e3", {"--mode", "sideways"}).code, 1);
  EXPECT_EQ(cli({"train", "--arch", "vgg", "--data", data(), "--out", (root / "e4").string()}).code, 1);
}

TEST_F(Cli, ReportWithoutManifestFails) {
  const fs::path empty = root / "empty";
  fs::create_directories(empty);
  const auto r = cli({"report", empty.string()});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("error: code="), std::string::npos);
}

TEST_F(Cli, BinaryExitCodes) {
  EXPECT_EQ(binary_exit(""), 1);
  EXPECT_EQ(binary_exit("frobnicate"), 1);
  EXPECT_EQ(binary_exit("--help"), 0);
  EXPECT_EQ(binary_exit("inspect " + (root / "missing.nqm").string()), 2);
  EXPECT_EQ(binary_exit("eval --model " + model() + " --data " + data()), 0);
}

}  // namespace
