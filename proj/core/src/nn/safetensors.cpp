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

#include "qe/nn/safetensors.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>

#include "qe/error.hpp"

namespace qe::nn {
namespace {

static_assert(std::endian::native == std::endian::little,
              "weight files are little-endian; big-endian hosts are unsupported");

using nlohmann::json;

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& why) {
  throw IoError("corrupt tensor file " + path.string() + ": " + why);
}

double half_to_double(std::uint16_t h) {
  const int sign = (h >> 15) & 1;
  const int exp = (h >> 10) & 0x1f;
  const int frac = h & 0x3ff;
  double v;
  if (exp == 0) {
    v = std::ldexp(frac, -24);
  } else if (exp == 31) {
    v = frac ? std::numeric_limits<double>::quiet_NaN()
             : std::numeric_limits<double>::infinity();
  } else {
    v = std::ldexp(frac + 1024, exp - 25);
  }
  return sign ? -v : v;
}

}  // namespace

const StoredTensor& TensorArchive::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw IoError("tensor '" + name + "' missing from weight file");
  return it->second;
}

TensorArchive read_safetensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("weight file not found: " + path.string());
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  if (file_size < 8) corrupt(path, "file shorter than header length field");
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), 8);
  if (header_len > file_size - 8) corrupt(path, "header length exceeds file size");
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  json h;
  try {
    h = json::parse(header);
  } catch (const json::exception& e) {
    corrupt(path, std::string("unparsable header: ") + e.what());
  }
  const std::uint64_t data_start = 8 + header_len;
  const std::uint64_t data_size = file_size - data_start;
  std::vector<char> data(data_size);
  in.read(data.data(), static_cast<std::streamsize>(data_size));
  if (!in) corrupt(path, "short read");

  TensorArchive out;
  try {
    for (auto& [name, entry] : h.items()) {
      if (name == "__metadata__") {
        for (auto& [k, v] : entry.items()) out.metadata[k] = v.get<std::string>();
        continue;
      }
      const std::string dtype = entry.at("dtype").get<std::string>();
      StoredTensor t;
      t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto offsets = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
      if (offsets.size() != 2 || offsets[0] > offsets[1] || offsets[1] > data_size) {
        corrupt(path, "tensor '" + name + "' has out-of-range offsets");
      }
      std::size_t count = 1;
      for (auto d : t.shape) {
        if (d < 0) corrupt(path, "negative dimension in '" + name + "'");
        count *= static_cast<std::size_t>(d);
      }
      const std::size_t width = dtype == "F64" ? 8 : dtype == "F32" ? 4
                                : (dtype == "F16" || dtype == "BF16") ? 2 : 0;
      if (width == 0) throw IoError("unsupported dtype " + dtype + " in " + path.string());
      if (offsets[1] - offsets[0] != count * width) {
        corrupt(path, "tensor '" + name + "' byte size does not match its shape");
      }
      const char* src = data.data() + offsets[0];
      t.values.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        if (dtype == "F64") {
          double v;
          std::memcpy(&v, src + 8 * i, 8);
          t.values[i] = v;
        } else if (dtype == "F32") {
          float v;
          std::memcpy(&v, src + 4 * i, 4);
          t.values[i] = v;
        } else {
          std::uint16_t v;
          std::memcpy(&v, src + 2 * i, 2);
          if (dtype == "F16") {
            t.values[i] = half_to_double(v);
          } else {
            const std::uint32_t bits = static_cast<std::uint32_t>(v) << 16;
            float f;
            std::memcpy(&f, &bits, 4);
            t.values[i] = f;
          }
        }
      }
      out.tensors.emplace(name, std::move(t));
    }
  } catch (const json::exception& e) {
    corrupt(path, std::string("malformed header entry: ") + e.what());
  }
  return out;
}

void write_safetensors(const TensorArchive& archive, const std::filesystem::path& path,
                       StorageType type) {
  const std::size_t width = type == StorageType::F64 ? 8 : 4;
  json h = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : archive.tensors) {
    const std::uint64_t bytes = t.values.size() * width;
    h[name] = {{"dtype", type == StorageType::F64 ? "F64" : "F32"},
               {"shape", t.shape},
               {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  if (!archive.metadata.empty()) h["__metadata__"] = archive.metadata;
  std::string header = h.dump();
  while ((header.size() + 8) % 8 != 0) header.push_back(' ');

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const std::uint64_t header_len = header.size();
  out.write(reinterpret_cast<const char*>(&header_len), 8);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, t] : archive.tensors) {
    if (type == StorageType::F64) {
      out.write(reinterpret_cast<const char*>(t.values.data()),
                static_cast<std::streamsize>(t.values.size() * 8));
    } else {
      std::vector<float> f(t.values.begin(), t.values.end());
      out.write(reinterpret_cast<const char*>(f.data()),
                static_cast<std::streamsize>(f.size() * 4));
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace qe::nn
