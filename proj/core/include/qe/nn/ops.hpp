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

#include <span>
#include <vector>

#include "qe/nn/tensor.hpp"

namespace qe::nn {

struct ConvParams {
  int stride_h = 1;
  int stride_w = 1;
  int pad_h = 0;
  int pad_w = 0;

  static ConvParams same(int kernel, int stride = 1) {
    return {stride, stride, kernel / 2, kernel / 2};
  }
};

/// 2-D cross-correlation with zero padding. `weight` is (Cout, Cin, kh, kw);
/// `bias` is (1, Cout, 1, 1) or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              ConvParams p = {});

/// Padding cells count as -inf (PyTorch semantics, floor output size).
Tensor max_pool2d(const Tensor& x, int kernel, int stride, int pad = 0);
Tensor avg_pool2d(const Tensor& x, int kernel, int stride, int pad = 0,
                  bool count_include_pad = true);
Tensor global_avg_pool(const Tensor& x);
Tensor upsample_nearest(const Tensor& x, int factor);

/// Reflect-pads the bottom and right edges (no edge repetition).
Tensor reflect_pad(const Tensor& x, int bottom, int right);
/// Keeps the top-left `height` x `width` window.
Tensor crop(const Tensor& x, int height, int width);
Tensor concat_channels(std::span<const Tensor> parts);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
/// x - s broadcast, where `s` holds a single (differentiable) element.
Tensor sub_broadcast(const Tensor& x, const Tensor& s);
/// Per-channel x * scale[c] + shift[c] with constant coefficients.
Tensor affine_channel(const Tensor& x, std::span<const double> scale,
                      std::span<const double> shift);

Tensor leaky_relu(const Tensor& x, double slope);
inline Tensor relu(const Tensor& x) { return leaky_relu(x, 0.0); }
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
/// Gradient is zero where the input was clamped.
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Scales each spatial feature vector to unit L2 norm across channels:
/// x / (||x||_c + eps).
Tensor normalize_channels(const Tensor& x, double eps = 1e-10);

/// Divides `weight` by its largest singular value, estimated with one power
/// iteration from `u` (length Cout). When `update_u` is set, `u` is advanced
/// in place. The estimate vectors are treated as constants for the gradient.
Tensor spectral_normalize(const Tensor& weight, std::vector<double>& u,
                          bool update_u);

/// Bilinear resize with half-pixel centers (align_corners = false).
/// Forward only: throws if a gradient would be required.
Tensor resize_bilinear(const Tensor& x, int height, int width);

}  // namespace qe::nn
