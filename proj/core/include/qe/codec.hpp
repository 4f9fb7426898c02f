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

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "qe/manifest.hpp"
#include "qe/types.hpp"

namespace qe {

/// External BPG binaries. from_env honours QE_BPGENC and QE_BPGDEC.
struct CodecPaths {
  std::string bpgenc = "bpgenc";
  std::string bpgdec = "bpgdec";

  static CodecPaths from_env();
};

enum class ChromaFormat { Yuv420, Yuv444 };
ChromaFormat parse_chroma(std::string_view name);

struct CompressOptions {
  ChromaFormat bpg_chroma = ChromaFormat::Yuv420;
  CodecPaths paths = CodecPaths::from_env();
  /// Keep the encoded bitstream here when set.
  std::optional<std::filesystem::path> bitstream_path;
  /// Scratch space for BPG round trips; the system temp dir when empty.
  std::filesystem::path work_dir;
  bool require_standard_grid = true;
};

struct CompressionResult {
  ImageTensor image;
  double bpp = 0.0;
  std::uint64_t bits = 0;
};

/// Encodes and decodes `raw`. JPEG runs in-process through libjpeg (baseline,
/// 4:2:0 chroma for colour input); BPG runs bpgenc/bpgdec. bpp is the full
/// bitstream size in bits, headers included, over H·W.
CompressionResult compress(const ImageTensor& raw, const CodecSpec& codec,
                           const CompressOptions& options = {});

struct CompressionJob {
  std::filesystem::path input_path;
  CodecSpec codec;
  std::filesystem::path output_image_path;
  std::filesystem::path bitstream_path;
};

/// Reads input_path, compresses, writes the decoded PNG and the bitstream.
CompressionResult run_job(const CompressionJob& job, CompressOptions options = {});

struct BuildOptions {
  CompressOptions compress;
  int jobs = 1;
  Split split = Split::Train;
};

/// PNG files in `dir`, sorted by name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// One entry per (image, codec) pair. Outputs go to
/// `out_dir/compressed/<tag>/<stem>.png` and `out_dir/bitstreams/<tag>/`; the
/// manifest is written to `out_dir/manifest.jsonl` with paths relative to it.
Manifest build_dataset(const std::filesystem::path& raw_dir, const std::vector<CodecSpec>& codecs,
                       const std::filesystem::path& out_dir, const BuildOptions& options = {});

struct PatchSpec {
  int size = 128;
  /// Grid stride; 0 means `size` (non-overlapping tiles).
  int stride = 0;
  /// When > 0, draw this many random positions per image instead of a grid.
  int count_per_image = 0;
  std::uint64_t seed = 0;
};

/// Aligned crops of raw/compressed/enhanced. Patch ids are `<id>#<y>_<x>`.
std::vector<ImageTriplet> crop_patches(const ImageTriplet& t, const PatchSpec& spec);

/// Procedural test image: gradients, shapes, gratings and film grain.
ImageTensor synthetic_image(int height, int width, std::uint64_t seed);

/// Exit status of a child process plus its captured output.
struct ProcessResult {
  int exit_code = 0;
  std::string stderr_text;
  std::string stdout_text;
};
/// Runs argv[0] (searched on PATH) without a shell. Throws
/// CodecError("codec binary missing: ...") when it cannot be started.
ProcessResult run_process(const std::vector<std::string>& argv);

}  // namespace qe
