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

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qe/image.hpp"

namespace qe {

enum class CodecId { Bpg, Jpeg };

inline constexpr std::array<int, 5> kBpgQpGrid = {27, 32, 37, 42, 47};
inline constexpr std::array<int, 5> kJpegQfGrid = {10, 20, 30, 40, 50};

/// Codec plus its quality knob: QP for BPG (lower is finer), QF for JPEG
/// (higher is finer).
struct CodecSpec {
  CodecId id = CodecId::Jpeg;
  int quality = 10;

  /// True when `quality` is one of the five standard settings for the codec.
  bool on_standard_grid() const;
  /// "bpg_qp37" / "jpeg_qf10"; used in file and source names.
  std::string tag() const;

  friend bool operator==(const CodecSpec&, const CodecSpec&) = default;
};

std::string_view codec_name(CodecId id);
/// Accepts "bpg" or "jpeg" (case-insensitive); throws ConfigError otherwise.
CodecId parse_codec(std::string_view name);

/// Violations of the codec's admissible range. With `require_standard_grid`
/// the quality must also lie on the standard five-point grid.
std::vector<std::string> validate_codec(const CodecSpec& codec,
                                        bool require_standard_grid = true);

/// Aligned raw / compressed / (optionally) enhanced images of one source.
struct ImageTriplet {
  ImageTensor raw;
  ImageTensor compressed;
  std::optional<ImageTensor> enhanced;
  CodecSpec codec;
  double bpp = 0.0;
  std::string source_id;
};

struct TripletCheck {
  bool require_standard_grid = true;
};

/// Returns one human-readable string per violated invariant; an empty list
/// means the triplet is well formed. Never throws.
std::vector<std::string> validate_triplet(const ImageTriplet& t,
                                          TripletCheck options = {});

}  // namespace qe
