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

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "qe/image.hpp"
#include "qe/nn/layers.hpp"

namespace qe {

struct GeneratorConfig {
  int channels = 64;
  int num_blocks = 8;
  int in_channels = 3;
  int out_channels = 3;

  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

/// Residual CNN: conv_in, LReLU, residual blocks (conv, LReLU, conv, skip),
/// conv_out, plus a global skip from the input. Output shape equals input.
class Generator {
 public:
  /// Identity map: every weight and bias is zero, so forward(x) == x.
  explicit Generator(GeneratorConfig config);
  /// He init everywhere; conv_out scaled by 0.1 so training starts near identity.
  void init_random(std::mt19937_64& rng);

  /// Unclamped output (training path).
  nn::Tensor forward(const nn::Tensor& x) const;

  nn::ParameterList parameters() const;
  const GeneratorConfig& config() const { return config_; }

 private:
  GeneratorConfig config_;
  nn::Conv2d conv_in_;
  std::vector<std::pair<nn::Conv2d, nn::Conv2d>> blocks_;
  nn::Conv2d conv_out_;
};

/// Inference export: G(I_C) clamped to [0, 1].
ImageTensor enhance(const Generator& g, const ImageTensor& compressed);

enum class DiscArch { VggStyle, UnetStyle };

struct DiscriminatorConfig {
  DiscArch arch = DiscArch::VggStyle;
  bool conditional = true;
  bool spectral_norm = false;
  int image_channels = 3;
  int channels = 64;
  /// Stride-2 stages of the VGG-style stack (the U-Net always has three).
  int num_stages = 3;

  int in_channels() const { return conditional ? 2 * image_channels : image_channels; }
  friend bool operator==(const DiscriminatorConfig&, const DiscriminatorConfig&) = default;
};

std::string_view disc_arch_name(DiscArch arch);
DiscArch parse_disc_arch(std::string_view name);

/// D(x | c). VGG style returns one logit per sample, shape (N, 1, 1, 1); the
/// U-Net returns a logit map (N, 1, H, W). Conditioning concatenates c after x
/// along channels at the input.
class Discriminator {
 public:
  /// Weights zero; call init_random before training.
  explicit Discriminator(DiscriminatorConfig config);
  void init_random(std::mt19937_64& rng);

  /// `update_sn` advances spectral-norm power iterations (D updates only).
  nn::Tensor forward(const nn::Tensor& image, const std::optional<nn::Tensor>& condition,
                     bool update_sn = false);

  nn::ParameterList parameters() const;
  nn::BufferList buffers();
  const DiscriminatorConfig& config() const { return config_; }
  /// Channel count seen by the first convolution.
  int first_layer_in_channels() const { return convs_.front().in_channels(); }

 private:
  nn::Tensor forward_vgg(const nn::Tensor& x, bool update_sn);
  nn::Tensor forward_unet(const nn::Tensor& x, bool update_sn);
  DiscriminatorConfig config_;
  std::vector<nn::Conv2d> convs_;
};

/// Raw logits for one image (and its condition when conditional).
std::vector<double> discriminate(Discriminator& d, const ImageTensor& image,
                                 const std::optional<ImageTensor>& condition);
/// Mean sigmoid of the logits.
double realism_score(Discriminator& d, const ImageTensor& image,
                     const std::optional<ImageTensor>& condition);

}  // namespace qe
