// Copyright 2026 The DebiasQE Authors
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

#include <fstream>
#include <random>

#include "qe/error.hpp"
#include "qe/manifest.hpp"
#include "qe/types.hpp"
#include "testing.hpp"

namespace qe {
namespace {

using testing::TempDir;

ImageTriplet well_formed(std::mt19937_64& rng) {
  ImageTriplet t;
  t.raw = testing::random_image(rng, 16, 16);
  t.compressed = testing::random_image(rng, 16, 16);
  t.enhanced = testing::random_image(rng, 16, 16);
  t.codec = {CodecId::Bpg, 37};
  t.bpp = 0.4;
  t.source_id = "img0@bpg_qp37";
  return t;
}

TEST(ImageTensorTest, RejectsOutOfRangeAndBadShape) {
  EXPECT_THROW(ImageTensor(0, 4, 3), ShapeError);
  EXPECT_THROW(ImageTensor(4, 4, 2), ShapeError);
  EXPECT_THROW(ImageTensor::from_pixels(1, 1, 1, {1.5f}), Error);
  EXPECT_THROW(ImageTensor::from_pixels(2, 2, 1, {0.f, 0.f}), ShapeError);
}

TEST(ImageTensorTest, PngRoundTripIsLossless) {
  TempDir dir("png");
  std::mt19937_64 rng(3);
  for (int c : {1, 3}) {
    std::vector<std::uint8_t> bytes(5 * 7 * c);
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng() & 0xff);
    const auto img = ImageTensor::from_8bit(5, 7, c, bytes);
    write_png(img, dir / "a.png");
    EXPECT_EQ(read_png(dir / "a.png"), img);
    EXPECT_EQ(read_png(dir / "a.png").to_8bit(), bytes);
  }
}

TEST(ImageTensorTest, CropAndFlip) {
  std::vector<std::uint8_t> b{0, 1, 2, 3, 4, 5};
  const auto img = ImageTensor::from_8bit(2, 3, 1, b);
  EXPECT_EQ(img.crop(1, 1, 1, 2).to_8bit(), (std::vector<std::uint8_t>{4, 5}));
  EXPECT_EQ(img.flipped_horizontal().to_8bit(), (std::vector<std::uint8_t>{2, 1, 0, 5, 4, 3}));
  EXPECT_THROW(img.crop(1, 2, 2, 2), ShapeError);
}

TEST(CodecSpecTest, GridAndTags) {
  for (int qp : kBpgQpGrid) EXPECT_TRUE((CodecSpec{CodecId::Bpg, qp}.on_standard_grid()));
  for (int qf : kJpegQfGrid) EXPECT_TRUE((CodecSpec{CodecId::Jpeg, qf}.on_standard_grid()));
  EXPECT_FALSE((CodecSpec{CodecId::Bpg, 30}.on_standard_grid()));
  EXPECT_EQ((CodecSpec{CodecId::Bpg, 37}.tag()), "bpg_qp37");
  EXPECT_EQ((CodecSpec{CodecId::Jpeg, 10}.tag()), "jpeg_qf10");
  EXPECT_EQ(parse_codec("BPG"), CodecId::Bpg);
  EXPECT_THROW(parse_codec("webp"), ConfigError);
  EXPECT_TRUE(validate_codec({CodecId::Bpg, 30}, false).empty());
  EXPECT_EQ(validate_codec({CodecId::Bpg, 30}, true).size(), 1u);
  EXPECT_FALSE(validate_codec({CodecId::Jpeg, 0}, false).empty());
}

TEST(ValidateTripletTest, WellFormedHasNoViolations) {
  std::mt19937_64 rng(1);
  EXPECT_TRUE(validate_triplet(well_formed(rng)).empty());
}

TEST(ValidateTripletTest, ShapeMismatch) {
  std::mt19937_64 rng(1);
  auto t = well_formed(rng);
  t.raw = testing::random_image(rng, 64, 64);
  t.compressed = testing::random_image(rng, 32, 32);
  t.enhanced.reset();
  EXPECT_EQ(validate_triplet(t), std::vector<std::string>{"shape mismatch"});
}

TEST(ValidateTripletTest, NegativeBpp) {
  std::mt19937_64 rng(1);
  auto t = well_formed(rng);
  t.bpp = -1;
  EXPECT_EQ(validate_triplet(t), std::vector<std::string>{"negative bpp"});
}

TEST(ValidateTripletTest, PureFunction) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto t = well_formed(rng);
    if (trial % 2) t.bpp = -0.5 * trial;
    if (trial % 3 == 0) t.enhanced = testing::random_image(rng, 8, 16);
    EXPECT_EQ(validate_triplet(t), validate_triplet(t));
  }
}

// Arbitrary valid manifest content, files not materialized.
Manifest random_manifest(std::mt19937_64& rng) {
  Manifest m;
  m.split = rng() % 2 ? Split::Train : Split::Val;
  const int n = static_cast<int>(rng() % 6);
  std::uniform_real_distribution<double> bpp(0.0, 8.0);
  for (int i = 0; i < n; ++i) {
    ManifestEntry e;
    e.source_id = "id_" + std::to_string(i) + "_" + std::to_string(rng() % 1000) + " \"q\"";
    e.raw_path = "raw/" + std::to_string(i) + ".png";
    e.compressed_path = "c/" + std::to_string(i) + ".png";
    if (rng() % 2) e.enhanced_path = "e/" + std::to_string(i) + ".png";
    e.codec = rng() % 2 ? CodecSpec{CodecId::Bpg, kBpgQpGrid[rng() % 5]}
                        : CodecSpec{CodecId::Jpeg, kJpegQfGrid[rng() % 5]};
    e.bpp = bpp(rng);
    m.entries.push_back(e);
  }
  return m;
}

TEST(ManifestTest, RoundTripOnRandomContent) {
  TempDir dir("manifest");
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Manifest m = random_manifest(rng);
    save_manifest(m, dir / "m.jsonl");
    EXPECT_EQ(load_manifest(dir / "m.jsonl", {.check_files = false}), m);
  }
}

TEST(ManifestTest, ThreeEntryRoundTripWithFiles) {
  TempDir dir("manifest3");
  std::mt19937_64 rng(4);
  Manifest m;
  for (int i = 0; i < 3; ++i) {
    const std::string r = "r" + std::to_string(i) + ".png", c = "c" + std::to_string(i) + ".png";
    write_png(testing::random_image(rng, 4, 4), dir / r);
    write_png(testing::random_image(rng, 4, 4), dir / c);
    m.entries.push_back({"s" + std::to_string(i), r, c, std::nullopt, {CodecId::Jpeg, 10}, 1.25});
  }
  save_manifest(m, dir / "m.jsonl");
  const Manifest back = load_manifest(dir / "m.jsonl");
  EXPECT_EQ(back, m);
  const auto triplets = load_triplets(back);
  ASSERT_EQ(triplets.size(), 3u);
  EXPECT_EQ(triplets[1].source_id, "s1");
  EXPECT_DOUBLE_EQ(triplets[1].bpp, 1.25);
}

TEST(ManifestTest, MissingFileErrors) {
  TempDir dir("manifest_missing");
  try {
    load_manifest(dir / "nope.jsonl");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("manifest not found"), std::string::npos);
  }
  Manifest m;
  m.entries.push_back({"lonely", "raw.png", "comp.png", std::nullopt, {CodecId::Jpeg, 10}, 1.0});
  save_manifest(m, dir / "m.jsonl");
  try {
    load_manifest(dir / "m.jsonl");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("lonely"), std::string::npos);
  }
}

TEST(ManifestTest, MalformedAndDuplicateRecords) {
  TempDir dir("manifest_bad");
  {
    std::ofstream out(dir / "bad.jsonl");
    out << "{\"kind\":\"manifest\",\"version\":1,\"split\":\"train\"}\n{not json\n";
  }
  EXPECT_THROW(load_manifest(dir / "bad.jsonl", {.check_files = false}), Error);
  Manifest m;
  m.entries.push_back({"dup", "a", "b", std::nullopt, {CodecId::Jpeg, 10}, 1.0});
  m.entries.push_back({"dup", "c", "d", std::nullopt, {CodecId::Jpeg, 10}, 1.0});
  save_manifest(m, dir / "dup.jsonl");
  EXPECT_THROW(load_manifest(dir / "dup.jsonl", {.check_files = false}), Error);
}

}  // namespace
}  // namespace qe
