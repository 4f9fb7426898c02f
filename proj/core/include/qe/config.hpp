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
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "qe/codec.hpp"
#include "qe/features.hpp"
#include "qe/metrics.hpp"
#include "qe/trainer.hpp"

namespace qe {

/// Layered run configuration. Keys are dotted paths into a YAML tree
/// ("train.steps", "model.generator.channels"). Only keys present in the
/// defaults are accepted, and every value must parse as its default's type.
/// Precedence, lowest first: defaults, file, environment, explicit sets.
class RunConfig {
 public:
  enum class Kind { Bool, Int, Real, String };

  static RunConfig defaults();

  /// YAML mapping; nested maps flatten to dotted keys.
  void merge_file(const std::filesystem::path& path);
  void merge_yaml(const std::string& text, const std::string& origin = "<string>");
  /// `QE__TRAIN__STEPS=10` sets train.steps. Variables whose key is unknown
  /// are rejected so typos do not pass silently; so are case-folded names
  /// that match more than one key (`QE__loss__lambda_R` is exact).
  void merge_env(const std::map<std::string, std::string>& env);
  void merge_process_env();
  /// "key=value".
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get_string(const std::string& key) const;
  long long get_int(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  /// Nested YAML of every key, sorted.
  std::string dump() const;
  /// Writes `dir/config.resolved`.
  void write_resolved(const std::filesystem::path& dir) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  void define(const std::string& key, Kind kind, std::string value);
  const std::string& raw(const std::string& key) const;
  std::map<std::string, std::string> values_;
  std::map<std::string, Kind> kinds_;
};

TrainConfig to_train_config(const RunConfig& cfg);
CompressOptions to_compress_options(const RunConfig& cfg);

/// VGG named by percept.weights (a torchvision-layout weight file), or the
/// seeded desk stand-in when percept.backbone is "desk".
std::shared_ptr<const VggBackbone> build_vgg(const RunConfig& cfg);
/// Pooled descriptor for FID: fid.backbone "inception" needs
/// fid.backbone_weights; "pooled_vgg" reuses the perceptual VGG.
std::shared_ptr<const PooledBackbone> build_pooled(const RunConfig& cfg,
                                                   std::shared_ptr<const VggBackbone> vgg);
FeatureExtractor build_extractor(const RunConfig& cfg);
/// LPIPS on the VGG of lpips.backbone_weights (else the perceptual VGG) with
/// lpips.weights calibration, or unit weights when that key is empty.
Lpips build_lpips(const RunConfig& cfg, std::shared_ptr<const VggBackbone> vgg);

}  // namespace qe
