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

#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qe/image.hpp"
#include "qe/nn/ops.hpp"
#include "qe/nn/safetensors.hpp"

namespace qe::nn {

/// Name -> handle pairs. Handles alias the module's storage.
using ParameterList = std::vector<std::pair<std::string, Tensor>>;
using BufferList = std::vector<std::pair<std::string, std::vector<double>*>>;

/// Convolution layer with optional bias and optional spectral normalization.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel_h, int kernel_w,
         ConvParams params, bool bias = true, bool spectral_norm = false);
  static Conv2d square(int in_channels, int out_channels, int kernel, int stride = 1,
                       bool bias = true, bool spectral_norm = false);

  /// `update_sn` advances the spectral-norm power iteration; leave it off
  /// outside discriminator updates.
  Tensor forward(const Tensor& x, bool update_sn = false);

  /// He-normal weights for a leaky-ReLU slope, times `scale`; zero bias.
  void init_kaiming(std::mt19937_64& rng, double slope = 0.0, double scale = 1.0);
  void zero();

  void collect(const std::string& prefix, ParameterList& params) const;
  void collect_buffers(const std::string& prefix, BufferList& buffers);

  int in_channels() const { return weight.shape().c; }
  int out_channels() const { return weight.shape().n; }
  bool spectral() const { return !sn_u.empty(); }

  Tensor weight;
  Tensor bias;
  ConvParams params;
  std::vector<double> sn_u;
};

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer over a fixed parameter list.
class Adam {
 public:
  Adam() = default;
  Adam(ParameterList params, AdamOptions options);

  /// Applies one update from the accumulated gradients. Parameters without
  /// a gradient are left untouched.
  void step();
  void zero_grad();

  std::int64_t steps() const { return t_; }
  const AdamOptions& options() const { return options_; }

  void save(TensorArchive& archive, const std::string& prefix) const;
  /// Throws IoError if the archive does not match the parameter list.
  void load(const TensorArchive& archive, const std::string& prefix);

 private:
  ParameterList params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t t_ = 0;
};

/// Copies parameter values into `archive` under `prefix`.
void export_parameters(const ParameterList& params, const std::string& prefix,
                       TensorArchive& archive);
/// Overwrites parameter values; shapes must match exactly.
void import_parameters(const ParameterList& params, const std::string& prefix,
                       const TensorArchive& archive);

/// Stacks same-shaped images into an (N, C, H, W) tensor.
Tensor images_to_tensor(std::span<const ImageTensor> images);
Tensor image_to_tensor(const ImageTensor& image);
/// Extracts sample `n`, clamping to [0, 1].
ImageTensor tensor_to_image(const Tensor& t, int n = 0);

}  // namespace qe::nn
