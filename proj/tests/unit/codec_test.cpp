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
#include <sstream>

#include "qe/codec.hpp"
#include "qe/error.hpp"
#include "testing.hpp"

#ifndef QE_TEST_DATA_DIR
#error "QE_TEST_DATA_DIR must be defined"
#endif

namespace qe {
namespace {

using testing::TempDir;

const std::filesystem::path kData = QE_TEST_DATA_DIR;

CompressOptions fake_bpg() {
  CompressOptions o;
  o.paths.bpgenc = (kData / "fake_bpgenc.sh").string();
  o.paths.bpgdec = (kData / "fake_bpgdec.sh").string();
  return o;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(JpegTest, ShapePreservedAndDeterministic) {
  const auto raw = synthetic_image(48, 40, 5);
  const auto a = compress(raw, {CodecId::Jpeg, 10});
  const auto b = compress(raw, {CodecId::Jpeg, 10});
  EXPECT_TRUE(a.image.same_shape(raw));
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.bits, b.bits);
  EXPECT_GT(a.bpp, 0.0);
  EXPECT_DOUBLE_EQ(a.bpp, a.bits / (48.0 * 40.0));
  EXPECT_NE(a.image, raw);
}

TEST(JpegTest, GrayscaleInput) {
  std::mt19937_64 rng(2);
  const auto raw = testing::random_image(rng, 16, 24, 1);
  const auto r = compress(raw, {CodecId::Jpeg, 50});
  EXPECT_EQ(r.image.channels(), 1);
  EXPECT_TRUE(r.image.same_shape(raw));
}

TEST(JpegTest, PinnedBppOnFixedImage) {
  // Regression value recorded from libjpeg on first run.
  const auto r = compress(synthetic_image(64, 64, 42), {CodecId::Jpeg, 10});
  EXPECT_EQ(r.bits, 6560u);
  EXPECT_DOUBLE_EQ(r.bpp, 6560.0 / 4096.0);
}

TEST(JpegTest, BppMonotoneInQuality) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto raw = synthetic_image(64, 64, seed);
    double previous = 0.0;
    for (int qf : kJpegQfGrid) {
      const double bpp = compress(raw, {CodecId::Jpeg, qf}).bpp;
      EXPECT_GE(bpp + 0.01, previous) << "seed " << seed << " qf " << qf;
      previous = bpp;
    }
  }
}

TEST(JpegTest, BitstreamKeptOnDisk) {
  TempDir dir("jpeg_bits");
  CompressOptions o;
  o.bitstream_path = dir / "x" / "a.jpg";
  const auto r = compress(synthetic_image(32, 32, 1), {CodecId::Jpeg, 30}, o);
  EXPECT_EQ(std::filesystem::file_size(*o.bitstream_path) * 8, r.bits);
  EXPECT_EQ(slurp(*o.bitstream_path).substr(0, 2), "\xff\xd8");
}

TEST(JpegTest, OffGridQualityRejectedUnlessAllowed) {
  const auto raw = synthetic_image(16, 16, 1);
  EXPECT_THROW(compress(raw, {CodecId::Jpeg, 75}), ConfigError);
  CompressOptions o;
  o.require_standard_grid = false;
  EXPECT_NO_THROW(compress(raw, {CodecId::Jpeg, 75}, o));
}

TEST(BpgTest, ExternalRoundTripThroughFakeCodec) {
  const auto raw = synthetic_image(32, 32, 3);
  const auto r = compress(raw, {CodecId::Bpg, 37}, fake_bpg());
  // The fake codec is lossless.
  EXPECT_EQ(r.image, raw);
  EXPECT_GT(r.bpp, 0.0);
}

TEST(BpgTest, BppMonotoneAcrossQp) {
  const auto raw = synthetic_image(32, 32, 3);
  CompressOptions o = fake_bpg();
  o.require_standard_grid = false;
  EXPECT_LT(compress(raw, {CodecId::Bpg, 51}, o).bpp, compress(raw, {CodecId::Bpg, 27}, o).bpp);
}

TEST(BpgTest, ChromaFlagReachesEncoder) {
  TempDir dir("bpg_chroma");
  CompressOptions o = fake_bpg();
  o.bpg_chroma = ChromaFormat::Yuv444;
  o.bitstream_path = dir / "a.bpg";
  compress(synthetic_image(16, 16, 1), {CodecId::Bpg, 27}, o);
  EXPECT_EQ(slurp(dir / "a.bpg").substr(0, 22), "FAKEBPG q=27 f=444\nxxx");
}

TEST(BpgTest, MissingBinary) {
  CompressOptions o;
  o.paths.bpgenc = "/nonexistent/bpgenc";
  try {
    compress(synthetic_image(16, 16, 1), {CodecId::Bpg, 27}, o);
    FAIL();
  } catch (const CodecError& e) {
    EXPECT_NE(std::string(e.what()).find("codec binary missing"), std::string::npos);
  }
}

TEST(BpgTest, NonzeroExitReportsStatusAndStderr) {
  CompressOptions o = fake_bpg();
  o.paths.bpgenc = (kData / "failing_codec.sh").string();
  try {
    compress(synthetic_image(16, 16, 1), {CodecId::Bpg, 27}, o);
    FAIL();
  } catch (const CodecError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("status 4"), std::string::npos);
    EXPECT_NE(msg.find("simulated encoder failure"), std::string::npos);
  }
}

TEST(BpgTest, EnvironmentOverridesBinaryPaths) {
  ::setenv("QE_BPGENC", "/opt/x/bpgenc", 1);
  ::setenv("QE_BPGDEC", "/opt/x/bpgdec", 1);
  const auto p = CodecPaths::from_env();
  ::unsetenv("QE_BPGENC");
  ::unsetenv("QE_BPGDEC");
  EXPECT_EQ(p.bpgenc, "/opt/x/bpgenc");
  EXPECT_EQ(p.bpgdec, "/opt/x/bpgdec");
  EXPECT_EQ(CodecPaths::from_env().bpgenc, "bpgenc");
}

void write_corpus(const std::filesystem::path& dir, int n) {
  for (int i = 0; i < n; ++i) {
    write_png(synthetic_image(32, 32, 100 + i), dir / ("img" + std::to_string(i) + ".png"));
  }
}

TEST(BuildDatasetTest, OneEntryPerImageAndCodec) {
  TempDir dir("build");
  write_corpus(dir / "raw", 2);
  std::vector<CodecSpec> qps;
  for (int qp : kBpgQpGrid) qps.push_back({CodecId::Bpg, qp});
  BuildOptions o;
  o.compress = fake_bpg();
  const Manifest m = build_dataset(dir / "raw", qps, dir / "out", o);
  EXPECT_EQ(m.entries.size(), 10u);
  const Manifest back = load_manifest(dir / "out" / "manifest.jsonl");
  EXPECT_EQ(back, m);
  for (const auto& t : load_triplets(back)) EXPECT_TRUE(validate_triplet(t).empty()) << t.source_id;
}

TEST(BuildDatasetTest, BothGridsOnOneImage) {
  TempDir dir("build_both");
  write_corpus(dir / "raw", 1);
  std::vector<CodecSpec> codecs;
  for (int qp : kBpgQpGrid) codecs.push_back({CodecId::Bpg, qp});
  for (int qf : kJpegQfGrid) codecs.push_back({CodecId::Jpeg, qf});
  BuildOptions o;
  o.compress = fake_bpg();
  EXPECT_EQ(build_dataset(dir / "raw", codecs, dir / "out", o).entries.size(), 10u);
  EXPECT_TRUE(std::filesystem::exists(dir / "out/bitstreams/jpeg_qf10/img0.jpg"));
  EXPECT_TRUE(std::filesystem::exists(dir / "out/bitstreams/bpg_qp27/img0.bpg"));
}

TEST(BuildDatasetTest, EmptyDirectory) {
  TempDir dir("build_empty");
  std::filesystem::create_directories(dir / "raw");
  try {
    build_dataset(dir / "raw", {{CodecId::Jpeg, 10}}, dir / "out");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("no input images"), std::string::npos);
  }
}

TEST(BuildDatasetTest, ErrorsCarrySourceId) {
  TempDir dir("build_err");
  write_corpus(dir / "raw", 1);
  BuildOptions o;
  o.compress.paths.bpgenc = (kData / "failing_codec.sh").string();
  try {
    build_dataset(dir / "raw", {{CodecId::Bpg, 27}}, dir / "out", o);
    FAIL();
  } catch (const CodecError& e) {
    EXPECT_NE(std::string(e.what()).find("img0@bpg_qp27"), std::string::npos);
  }
}

TEST(BuildDatasetTest, ParallelRunsProduceIdenticalManifests) {
  TempDir dir("build_det");
  write_corpus(dir / "raw", 4);
  std::vector<CodecSpec> codecs{{CodecId::Jpeg, 10}, {CodecId::Jpeg, 30}};
  BuildOptions serial, parallel;
  parallel.jobs = 3;
  build_dataset(dir / "raw", codecs, dir / "a", serial);
  build_dataset(dir / "raw", codecs, dir / "b", parallel);
  EXPECT_EQ(slurp(dir / "a/manifest.jsonl"), slurp(dir / "b/manifest.jsonl"));
  EXPECT_EQ(slurp(dir / "a/compressed/jpeg_qf30/img2.png"), slurp(dir / "b/compressed/jpeg_qf30/img2.png"));
}

ImageTriplet triplet(int h, int w) {
  std::mt19937_64 rng(h * 31 + w);
  ImageTriplet t;
  t.raw = testing::random_image(rng, h, w);
  t.compressed = testing::random_image(rng, h, w);
  t.enhanced = testing::random_image(rng, h, w);
  t.source_id = "t";
  t.bpp = 0.5;
  return t;
}

TEST(CropPatchesTest, GridTiling) {
  const auto t = triplet(256, 256);
  const auto patches = crop_patches(t, {128, 128, 0, 0});
  ASSERT_EQ(patches.size(), 4u);
  EXPECT_EQ(patches[3].source_id, "t#128_128");
  EXPECT_EQ(patches[3].raw, t.raw.crop(128, 128, 128, 128));
}

TEST(CropPatchesTest, FullSizePatchIsIdentity) {
  const auto t = triplet(128, 128);
  const auto patches = crop_patches(t, {128, 0, 0, 0});
  ASSERT_EQ(patches.size(), 1u);
  EXPECT_EQ(patches[0].raw, t.raw);
  EXPECT_EQ(patches[0].compressed, t.compressed);
  EXPECT_EQ(*patches[0].enhanced, *t.enhanced);
}

TEST(CropPatchesTest, RandomPositionsAlignedAndSeeded) {
  const auto t = triplet(80, 96);
  const auto a = crop_patches(t, {32, 0, 12, 9});
  const auto b = crop_patches(t, {32, 0, 12, 9});
  ASSERT_EQ(a.size(), 12u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].source_id, b[i].source_id);
    EXPECT_EQ(a[i].raw, b[i].raw);
    int y = 0, x = 0;
    ASSERT_EQ(std::sscanf(a[i].source_id.c_str(), "t#%d_%d", &y, &x), 2);
    EXPECT_EQ(a[i].raw, t.raw.crop(y, x, 32, 32));
    EXPECT_EQ(a[i].compressed, t.compressed.crop(y, x, 32, 32));
    EXPECT_EQ(*a[i].enhanced, t.enhanced->crop(y, x, 32, 32));
  }
  const auto c = crop_patches(t, {32, 0, 12, 10});
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) differs |= a[i].source_id != c[i].source_id;
  EXPECT_TRUE(differs);
}

TEST(CropPatchesTest, PatchLargerThanImage) {
  EXPECT_THROW(crop_patches(triplet(64, 64), {128, 0, 0, 0}), Error);
}

TEST(SyntheticTest, DeterministicPerSeed) {
  EXPECT_EQ(synthetic_image(40, 56, 9), synthetic_image(40, 56, 9));
  EXPECT_NE(synthetic_image(40, 56, 9), synthetic_image(40, 56, 10));
}

}  // namespace
}  // namespace qe
