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
#include <zlib.h>

#include <filesystem>

#include "test_util.hpp"

namespace {

using namespace netquant;
namespace fs = std::filesystem;

const fs::path kFixtures = NETQUANT_FIXTURE_DIR;

// Golden values printed by fixtures/make_fixtures.py.
constexpr std::uint32_t kCifarFirstImageCrc = 0xc83daeb7u;
constexpr std::uint32_t kIdxFirstImageCrc = 0xf4ac40a4u;

std::uint32_t crc_of_floats(const float* p, std::size_t n) {
  Bytes b;
  for (std::size_t i = 0; i < n; ++i) {
    const auto u = std::bit_cast<std::uint32_t>(p[i]);
    for (int s = 0; s < 32; s += 8) b.push_back(static_cast<std::uint8_t>(u >> s));
  }
  return static_cast<std::uint32_t>(::crc32(0L, b.data(), static_cast<uInt>(b.size())));
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("netquant_ds_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(Cifar, GoldenFirstImage) {
  const Dataset d = load_cifar_file(kFixtures / "cifar_3.bin");
  ASSERT_EQ(d.size(), 3u);
  EXPECT_EQ(d.labels, (std::vector<int>{3, 7, 0}));
  EXPECT_EQ(d.images.shape(), (Shape{3, 3, 32, 32}));
  EXPECT_EQ(crc_of_floats(d.images.data(), kCifarPixels), kCifarFirstImageCrc);
}

TEST(Cifar, TenThousandRecords) {
  Bytes b(10000 * kCifarRecord, 128);
  for (std::size_t i = 0; i < 10000; ++i) b[i * kCifarRecord] = static_cast<std::uint8_t>(i % 10);
  const Dataset d = parse_cifar(b);
  EXPECT_EQ(d.size(), 10000u);
  for (auto l : d.labels) EXPECT_LT(l, 10u);
  for (float v : d.images.values()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
}

TEST(Cifar, BadLengthNamesOffset) {
  Bytes b = read_file(kFixtures / "cifar_3.bin");
  b.resize(b.size() - 10);
  try {
    parse_cifar(b);
    FAIL() << "no error";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 2 * kCifarRecord);
  }
  EXPECT_THROW(parse_cifar(Bytes{}), FormatError);
}

TEST(Cifar, LabelOutOfRangeNamesOffset) {
  Bytes b = read_file(kFixtures / "cifar_3.bin");
  b[kCifarRecord] = 10;
  try {
    parse_cifar(b);
    FAIL() << "no error";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), kCifarRecord);
  }
}

TEST(Cifar, DirectoryLayout) {
  const fs::path dir = scratch("cifar");
  const Bytes b = read_file(kFixtures / "cifar_3.bin");
  write_file(dir / "data_batch_1.bin", b);
  write_file(dir / "data_batch_2.bin", b);
  write_file(dir / "test_batch.bin", Bytes(b.begin(), b.begin() + kCifarRecord));
  const auto s = load_dataset(dir, DatasetFormat::cifar_binary);
  EXPECT_EQ(s.train.size(), 6u);
  EXPECT_EQ(s.test.size(), 1u);
  EXPECT_EQ(crc_of_floats(s.train.images.data() + 3 * kCifarPixels, kCifarPixels), kCifarFirstImageCrc);
  fs::remove(dir / "test_batch.bin");
  EXPECT_THROW(load_dataset(dir, DatasetFormat::cifar_binary), IoError);
  EXPECT_THROW(load_dataset(dir / "missing", DatasetFormat::cifar_binary), IoError);
  fs::remove_all(dir);
}

TEST(Idx, GoldenFirstImage) {
  const Dataset d = parse_idx(read_file(kFixtures / "idx-images"), read_file(kFixtures / "idx-labels"));
  EXPECT_EQ(d.images.shape(), (Shape{2, 1, 3, 4}));
  EXPECT_EQ(d.labels, (std::vector<int>{9, 4}));
  EXPECT_EQ(crc_of_floats(d.images.data(), 12), kIdxFirstImageCrc);
}

TEST(Idx, FormatErrors) {
  const Bytes im = read_file(kFixtures / "idx-images");
  const Bytes lb = read_file(kFixtures / "idx-labels");
  Bytes bad = im;
  bad[2] = 0x09;
  EXPECT_THROW(parse_idx(bad, lb), FormatError);
  EXPECT_THROW(parse_idx(Bytes(im.begin(), im.end() - 1), lb), FormatError);
  Bytes badl = lb;
  badl[7] = 3;
  try {
    parse_idx(im, badl);
    FAIL() << "no error";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
  badl = lb;
  badl[9] = 10;
  try {
    parse_idx(im, badl);
    FAIL() << "no error";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 9u);
  }
}

TEST(Idx, DirectoryLayout) {
  const fs::path dir = scratch("idx");
  for (const char* p : {"train", "t10k"}) {
    fs::copy_file(kFixtures / "idx-images", dir / (std::string(p) + "-images-idx3-ubyte"));
    fs::copy_file(kFixtures / "idx-labels", dir / (std::string(p) + "-labels-idx1-ubyte"));
  }
  const auto s = load_dataset(dir, parse_dataset_format("idx-images"));
  EXPECT_EQ(s.train.size(), 2u);
  EXPECT_EQ(s.test.size(), 2u);
  fs::remove_all(dir);
}

TEST(Subset, ExactSizeAndDeterministic) {
  const Dataset d = parse_cifar(synthetic_cifar(600, 3, 1));
  const Dataset a = select_subset(d, 512, 9);
  const Dataset b = select_subset(d, 512, 9);
  const Dataset c = select_subset(d, 512, 10);
  EXPECT_EQ(a.size(), 512u);
  EXPECT_TRUE(Network::bit_equal(a.images, b.images));
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_FALSE(Network::bit_equal(a.images, c.images));
  EXPECT_EQ(select_subset(d, 0, 9).size(), 600u);
  EXPECT_EQ(select_subset(d, 5000, 9).size(), 600u);
}

TEST(Synthetic, DeterministicAndValid) {
  const Bytes a = synthetic_cifar(20, 7, 1);
  EXPECT_EQ(a, synthetic_cifar(20, 7, 1));
  EXPECT_NE(a, synthetic_cifar(20, 7, 2));
  const Dataset d = parse_cifar(a);
  EXPECT_EQ(d.size(), 20u);
}

TEST(DatasetFormat, Names) {
  EXPECT_EQ(parse_dataset_format("cifar-binary"), DatasetFormat::cifar_binary);
  EXPECT_EQ(parse_dataset_format("idx-images"), DatasetFormat::idx);
  EXPECT_THROW(parse_dataset_format("png"), ConfigError);
}

}  // namespace
