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
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qe/image.hpp"
#include "qe/nn/layers.hpp"
#include "qe/stats.hpp"

namespace qe {

/// Deterministic pseudo-random values in [-1, 1): element e of tensor k is
/// splitmix64((k << 32) | e) scaled from its top 53 bits.
std::vector<double> hash_uniform(std::uint64_t k, std::size_t count);

/// Per-channel input normalization applied to [0, 1] images.
struct InputNorm {
  std::array<double, 3> mean;
  std::array<double, 3> std;
};
inline constexpr InputNorm kImageNetNorm{{0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}};
/// LPIPS scaling layer (shift/scale on [-1, 1] input) rewritten for [0, 1] input.
inline constexpr InputNorm kLpipsNorm{{(1.0 - 0.030) / 2, (1.0 - 0.088) / 2, (1.0 - 0.188) / 2},
                                      {0.458 / 2, 0.448 / 2, 0.450 / 2}};

struct VggLayout {
  std::vector<int> convs_per_block;
  std::vector<int> widths;

  friend bool operator==(const VggLayout&, const VggLayout&) = default;
};
VggLayout vgg19_layout();
VggLayout vgg16_layout();
/// Narrow five-block layout used for desk-scale runs and tests.
VggLayout desk_vgg_layout();

/// Plain VGG feature stack (3x3 convs + ReLU, 2x2 max pool between blocks).
/// Weights are frozen: gradients flow to the input only.
class VggBackbone {
 public:
  /// All weights and biases zero.
  explicit VggBackbone(VggLayout layout);
  /// He-normal weights from a seeded generator, zero biases.
  static VggBackbone seeded(VggLayout layout, std::uint64_t seed);
  /// Every tensor from hash_uniform in torchvision name order; weights
  /// scaled by sqrt(6 / fan_in), biases by 0.1.
  static VggBackbone hashed(VggLayout layout);
  /// Reads torchvision `features.{i}.weight/bias` tensors. Block structure is
  /// inferred from the index gaps (a pool sits between blocks).
  static VggBackbone from_archive(const nn::TensorArchive& archive);
  static VggBackbone load(const std::filesystem::path& path);

  nn::TensorArchive to_archive() const;
  void save(const std::filesystem::path& path) const;

  const VggLayout& layout() const { return layout_; }
  int num_blocks() const { return static_cast<int>(layout_.widths.size()); }
  int block_width(int block) const { return layout_.widths.at(block - 1); }

  /// Outputs of the final convolution of each requested block (1-based),
  /// before or after its ReLU, in request order. x is (N, 3, H, W) in [0, 1].
  std::vector<nn::Tensor> forward(const nn::Tensor& x, std::span<const int> blocks,
                                  bool pre_activation, const InputNorm& norm = kImageNetNorm) const;

  /// Mutable access for tests that need hand-set weights.
  nn::Conv2d& conv(int block, int index) { return convs_.at(block - 1).at(index); }

 private:
  VggLayout layout_;
  std::vector<std::vector<nn::Conv2d>> convs_;
};

/// Any backbone that maps an image to a fixed-length pooled descriptor.
class PooledBackbone {
 public:
  virtual ~PooledBackbone() = default;
  virtual std::vector<double> pool(const ImageTensor& image) const = 0;
  virtual int dim() const = 0;
  virtual std::string name() const = 0;
};

/// torchvision InceptionV3 up to the 2048-d average pool. Batch norms are
/// folded into their convolutions (eps 1e-3). Input is resized bilinearly to
/// 299x299 (half-pixel centers) and mapped to [-1, 1].
class InceptionV3 : public PooledBackbone {
 public:
  static InceptionV3 from_archive(const nn::TensorArchive& archive);
  static InceptionV3 load(const std::filesystem::path& path);
  /// Hash-initialised weights: conv weights sqrt(6 / fan_in)·u, BN weight
  /// 1 + 0.1·u, bias 0.1·u, running mean 0.1·u, running var 1 + 0.5·u.
  static nn::TensorArchive hashed_archive();

  nn::Tensor forward(const nn::Tensor& x) const;
  std::vector<double> pool(const ImageTensor& image) const override;
  int dim() const override { return 2048; }
  std::string name() const override { return "inception_v3"; }

 private:
  struct Unit {
    nn::Tensor weight;
    nn::Tensor bias;
    nn::ConvParams params;
  };
  nn::Tensor unit(const std::string& name, const nn::Tensor& x) const;
  std::map<std::string, Unit> units_;
};

/// Global-average-pooled post-activation features of a VGG backbone's last
/// block. Small stand-in for the Inception descriptor.
class PooledVgg : public PooledBackbone {
 public:
  explicit PooledVgg(std::shared_ptr<const VggBackbone> vgg) : vgg_(std::move(vgg)) {}
  std::vector<double> pool(const ImageTensor& image) const override;
  int dim() const override { return vgg_->block_width(vgg_->num_blocks()); }
  std::string name() const override { return "pooled_vgg"; }

 private:
  std::shared_ptr<const VggBackbone> vgg_;
};

enum class Backbone { Vgg19, InceptionPool };

struct FeatureTapSpec {
  Backbone backbone = Backbone::Vgg19;
  int block = 5;
  bool pre_activation = true;

  friend bool operator==(const FeatureTapSpec&, const FeatureTapSpec&) = default;
};

struct FeatureMap {
  /// (h, w, c) row-major, channel-interleaved; pooled taps use h = w = 1.
  std::vector<double> data;
  int height = 1;
  int width = 1;
  int channels = 0;
  FeatureTapSpec tap;

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

class FeatureExtractor {
 public:
  explicit FeatureExtractor(std::shared_ptr<const VggBackbone> vgg,
                            std::shared_ptr<const PooledBackbone> pooled = nullptr);

  /// Differentiable spatial tap of a batch (VGG taps only).
  nn::Tensor features(const nn::Tensor& x, const FeatureTapSpec& tap) const;
  FeatureMap extract(const ImageTensor& image, const FeatureTapSpec& tap) const;
  /// Spatially pooled descriptor: GAP of the VGG tap, or the pooled backbone.
  std::vector<double> descriptor(const ImageTensor& image, const FeatureTapSpec& tap) const;

  const VggBackbone& vgg() const;
  std::shared_ptr<const VggBackbone> vgg_ptr() const { return vgg_; }
  const PooledBackbone& pooled() const;
  bool has_pooled() const { return pooled_ != nullptr; }

 private:
  void check_tap(const FeatureTapSpec& tap) const;
  std::shared_ptr<const VggBackbone> vgg_;
  std::shared_ptr<const PooledBackbone> pooled_;
};

FeatureStats extract_dataset_stats(std::span<const ImageTensor> images, const FeatureTapSpec& tap,
                                   const FeatureExtractor& extractor, int jobs = 1);

}  // namespace qe
