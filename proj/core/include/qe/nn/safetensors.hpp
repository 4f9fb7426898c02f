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
#include <map>
#include <string>
#include <vector>

namespace qe::nn {

/// One named array from a weight file, widened to double.
struct StoredTensor {
  std::vector<std::int64_t> shape;
  std::vector<double> values;
};

/// Contents of a safetensors file: 8-byte little-endian header length, a JSON
/// header mapping names to dtype/shape/offsets (plus an optional string map
/// under "__metadata__"), then the raw little-endian data.
struct TensorArchive {
  std::map<std::string, StoredTensor> tensors;
  std::map<std::string, std::string> metadata;

  const StoredTensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
};

enum class StorageType { F32, F64 };

/// F16/BF16/F32/F64 are accepted on read. Structural problems (truncation,
/// bad offsets, unparsable header) raise IoError mentioning "corrupt".
TensorArchive read_safetensors(const std::filesystem::path& path);
void write_safetensors(const TensorArchive& archive, const std::filesystem::path& path,
                       StorageType type = StorageType::F32);

}  // namespace qe::nn
