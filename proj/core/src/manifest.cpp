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

#include "qe/manifest.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <set>

#include "qe/error.hpp"

namespace qe {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kManifestVersion = 1;

[[noreturn]] void malformed(const fs::path& path, std::size_t line,
                            const std::string& why) {
  throw Error("malformed record in " + path.string() + " line " +
              std::to_string(line) + ": " + why);
}

}  // namespace

fs::path Manifest::resolve(const std::string& stored) const {
  fs::path p(stored);
  if (p.is_absolute() || root.empty()) return p;
  return root / p;
}

const ManifestEntry* Manifest::find(const std::string& source_id) const {
  for (const auto& e : entries) {
    if (e.source_id == source_id) return &e;
  }
  return nullptr;
}

std::string_view split_name(Split split) {
  return split == Split::Train ? "train" : "val";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

Manifest load_manifest(const fs::path& path, ManifestLoadOptions options) {
  std::ifstream in(path);
  if (!fs::exists(path) || !in) {
    throw IoError("manifest not found: " + path.string());
  }
  Manifest m;
  m.root = path.parent_path();
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      malformed(path, lineno, e.what());
    }
    try {
      const std::string kind = rec.at("kind").get<std::string>();
      if (kind == "manifest") {
        if (have_header) malformed(path, lineno, "duplicate header");
        if (rec.at("version").get<int>() != kManifestVersion) {
          malformed(path, lineno, "unsupported version");
        }
        m.split = parse_split(rec.at("split").get<std::string>());
        have_header = true;
      } else if (kind == "entry") {
        ManifestEntry e;
        e.source_id = rec.at("source_id").get<std::string>();
        e.raw_path = rec.at("raw").get<std::string>();
        e.compressed_path = rec.at("compressed").get<std::string>();
        if (rec.contains("enhanced") && !rec["enhanced"].is_null()) {
          e.enhanced_path = rec["enhanced"].get<std::string>();
        }
        e.codec.id = parse_codec(rec.at("codec").get<std::string>());
        e.codec.quality = rec.at("quality").get<int>();
        e.bpp = rec.at("bpp").get<double>();
        if (e.source_id.empty()) malformed(path, lineno, "empty source_id");
        if (!seen.insert(e.source_id).second) {
          malformed(path, lineno, "duplicate source_id " + e.source_id);
        }
        m.entries.push_back(std::move(e));
      } else {
        malformed(path, lineno, "unknown record kind '" + kind + "'");
      }
    } catch (const json::exception& e) {
      malformed(path, lineno, e.what());
    } catch (const ConfigError& e) {
      malformed(path, lineno, e.what());
    }
  }
  if (!have_header) malformed(path, lineno, "missing manifest header");

  if (options.check_files) {
    for (const auto& e : m.entries) {
      auto check = [&](const std::string& p, const char* role) {
        if (!fs::exists(m.resolve(p))) {
          throw IoError("source_id " + e.source_id + ": missing " + role +
                        " file " + m.resolve(p).string());
        }
      };
      check(e.raw_path, "raw");
      check(e.compressed_path, "compressed");
      if (e.enhanced_path) check(*e.enhanced_path, "enhanced");
    }
  }
  return m;
}

void save_manifest(const Manifest& m, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  json header = {{"kind", "manifest"},
                 {"version", kManifestVersion},
                 {"split", split_name(m.split)}};
  out << header.dump() << '\n';
  for (const auto& e : m.entries) {
    json rec = {{"kind", "entry"},
                {"source_id", e.source_id},
                {"raw", e.raw_path},
                {"compressed", e.compressed_path},
                {"codec", codec_name(e.codec.id)},
                {"quality", e.codec.quality},
                {"bpp", e.bpp}};
    if (e.enhanced_path) rec["enhanced"] = *e.enhanced_path;
    out << rec.dump() << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + path.string());
}

ImageTriplet load_triplet(const Manifest& m, const ManifestEntry& e) {
  ImageTriplet t;
  t.source_id = e.source_id;
  t.codec = e.codec;
  t.bpp = e.bpp;
  try {
    t.raw = read_png(m.resolve(e.raw_path));
    t.compressed = read_png(m.resolve(e.compressed_path));
    if (e.enhanced_path) t.enhanced = read_png(m.resolve(*e.enhanced_path));
  } catch (const IoError& err) {
    throw IoError("source_id " + e.source_id + ": " + err.what());
  }
  return t;
}

std::vector<ImageTriplet> load_triplets(const Manifest& m) {
  std::vector<ImageTriplet> out;
  out.reserve(m.entries.size());
  for (const auto& e : m.entries) out.push_back(load_triplet(m, e));
  return out;
}

}  // namespace qe
