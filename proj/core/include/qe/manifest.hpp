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

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "qe/types.hpp"

namespace qe {

enum class Split { Train, Val };

struct ManifestEntry {
  std::string source_id;
  std::string raw_path;
  std::string compressed_path;
  std::optional<std::string> enhanced_path;
  CodecSpec codec;
  double bpp = 0.0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Ordered list of triplet records. Paths are stored verbatim; relative ones
/// are resolved against `root`, the directory the manifest was loaded from.
///
/// On disk this is JSON Lines: one header record followed by one record per
/// entry, each with explicit field names:
///
///   {"kind":"manifest","version":1,"split":"train"}
///   {"kind":"entry","source_id":"img0_jpeg_qf10","raw":"raw/img0.png",...}
struct Manifest {
  std::vector<ManifestEntry> entries;
  Split split = Split::Train;
  std::filesystem::path root;  // not serialized, not compared

  std::filesystem::path resolve(const std::string& stored) const;
  const ManifestEntry* find(const std::string& source_id) const;

  friend bool operator==(const Manifest& a, const Manifest& b) {
    return a.split == b.split && a.entries == b.entries;
  }
};

struct ManifestLoadOptions {
  /// Require every referenced image file to exist.
  bool check_files = true;
};

/// Throws IoError("manifest not found: ...") for a missing path, Error naming
/// the line for malformed or duplicate records, and IoError naming the
/// source_id when a referenced file is missing.
Manifest load_manifest(const std::filesystem::path& path,
                       ManifestLoadOptions options = {});
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

/// Reads the images of one entry. Missing enhanced paths leave
/// `enhanced` empty.
ImageTriplet load_triplet(const Manifest& manifest, const ManifestEntry& entry);
std::vector<ImageTriplet> load_triplets(const Manifest& manifest);

}  // namespace qe
