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
#include <iosfwd>
#include <string>
#include <vector>

#include "qe/manifest.hpp"
#include "qe/networks.hpp"

namespace qe::cli {

/// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kUsageError = 2;

/// Entry point behind the `qe` binary. `args` excludes the program name.
/// Failures print one JSON error record to `err` (and to error.json in the
/// output directory when one was given).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Writes `out_dir/enhanced/<id>.png` for every entry and returns the
/// manifest with enhanced paths set. Raw and compressed paths are made
/// absolute so the result can live in `out_dir`.
Manifest enhance_manifest(const Generator& g, const Manifest& manifest,
                          const std::filesystem::path& out_dir, int jobs = 1);

/// External scorer protocol: `exe <image> <reference>` prints one number on
/// stdout and exits 0.
double external_score(const std::string& exe, const std::filesystem::path& image,
                      const std::filesystem::path& reference);

/// File-name-safe form of a source_id.
std::string file_stem_for(const std::string& source_id);

}  // namespace qe::cli
