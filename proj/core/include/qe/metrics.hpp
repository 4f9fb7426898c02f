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

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qe/features.hpp"
#include "qe/manifest.hpp"
#include "qe/stats.hpp"
#include "qe/types.hpp"

namespace qe {

/// 10 log10(peak^2 / MSE), capped at 100 dB when MSE < 1e-10.
double psnr(const ImageTensor& a, const ImageTensor& b, double peak = 1.0);

/// Frechet distance between two Gaussians. The trace of (Σa Σb)^{1/2} is
/// taken from the eigenvalues of the symmetric √Σa Σb √Σa. Eigenvalues below
/// -1e-6·max(1, λ_max) raise NumericError; smaller negatives are clipped.
double fid(const FeatureStats& a, const FeatureStats& b);

/// Layer-weighted distance between unit-normalized VGG activations.
class Lpips {
 public:
  /// Every channel weight is 1.
  explicit Lpips(std::shared_ptr<const VggBackbone> vgg);
  Lpips(std::shared_ptr<const VggBackbone> vgg, std::vector<std::vector<double>> weights);
  /// Reads `lin{k}.model.1.weight` tensors of shape (1, C_k, 1, 1).
  static Lpips load(std::shared_ptr<const VggBackbone> vgg, const std::filesystem::path& path);

  double distance(const ImageTensor& a, const ImageTensor& b) const;
  /// Differentiable per-batch mean distance.
  nn::Tensor distance(const nn::Tensor& a, const nn::Tensor& b) const;

  const std::vector<std::vector<double>>& weights() const { return weights_; }

 private:
  std::shared_ptr<const VggBackbone> vgg_;
  std::vector<std::vector<double>> weights_;
};

struct RdPoint {
  double bpp = 0.0;
  double quality = 0.0;

  friend bool operator==(const RdPoint&, const RdPoint&) = default;
};

struct RdCurve {
  std::string label;
  CodecId codec = CodecId::Jpeg;
  std::vector<RdPoint> points;
  std::string metric_id = "psnr";
  bool higher_is_better = true;
};

/// True for PSNR-like metrics; false for "fid" and "lpips".
bool metric_higher_is_better(const std::string& metric_id);

/// Bjontegaard delta rate of `test` against `reference`, in percent.
/// Cubic least-squares fit of ln(bpp) over quality, integrated on the common
/// quality interval; falls back to piecewise cubic Hermite interpolation when
/// the polynomial fit is ill-conditioned.
double bd_br(const RdCurve& reference, const RdCurve& test);

/// Set-level metric aggregate for one quality setting.
using SetMetric = std::function<double(std::span<const ImageTriplet>)>;

/// One point per manifest: (mean bpp, metric over the set). Points come back
/// sorted by bpp. Throws if any entry lacks an enhanced image.
RdCurve build_rd_curve(std::span<const Manifest> manifests, const std::string& metric_id,
                       const SetMetric& metric, const std::string& label = "enhanced");

}  // namespace qe
