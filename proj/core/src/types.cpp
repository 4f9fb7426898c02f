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

#include "qe/types.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "qe/error.hpp"

namespace qe {

bool CodecSpec::on_standard_grid() const {
  const auto& grid = id == CodecId::Bpg ? kBpgQpGrid : kJpegQfGrid;
  return std::find(grid.begin(), grid.end(), quality) != grid.end();
}

std::string CodecSpec::tag() const {
  return id == CodecId::Bpg ? "bpg_qp" + std::to_string(quality)
                            : "jpeg_qf" + std::to_string(quality);
}

std::string_view codec_name(CodecId id) {
  return id == CodecId::Bpg ? "bpg" : "jpeg";
}

CodecId parse_codec(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (lower == "bpg") return CodecId::Bpg;
  if (lower == "jpeg" || lower == "jpg") return CodecId::Jpeg;
  throw ConfigError("unknown codec '" + std::string(name) + "' (expected bpg or jpeg)");
}

std::vector<std::string> validate_codec(const CodecSpec& codec,
                                        bool require_standard_grid) {
  std::vector<std::string> out;
  if (codec.id == CodecId::Bpg && (codec.quality < 0 || codec.quality > 51)) {
    out.push_back("BPG QP out of range [0,51]: " + std::to_string(codec.quality));
  } else if (codec.id == CodecId::Jpeg &&
             (codec.quality < 1 || codec.quality > 100)) {
    out.push_back("JPEG QF out of range [1,100]: " + std::to_string(codec.quality));
  } else if (require_standard_grid && !codec.on_standard_grid()) {
    out.push_back("codec setting " + codec.tag() + " is not on the standard grid");
  }
  return out;
}

std::vector<std::string> validate_triplet(const ImageTriplet& t,
                                          TripletCheck options) {
  std::vector<std::string> out;
  if (t.raw.empty() || t.compressed.empty()) {
    out.emplace_back("missing raw or compressed image");
  } else if (!t.raw.same_shape(t.compressed)) {
    out.emplace_back("shape mismatch");
  }
  if (t.enhanced && !t.enhanced->same_shape(t.raw)) {
    out.emplace_back("shape mismatch: enhanced");
  }
  if (!std::isfinite(t.bpp)) {
    out.emplace_back("non-finite bpp");
  } else if (t.bpp < 0.0) {
    out.emplace_back("negative bpp");
  }
  if (t.source_id.empty()) out.emplace_back("empty source_id");
  for (auto& v : validate_codec(t.codec, options.require_standard_grid)) {
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace qe
