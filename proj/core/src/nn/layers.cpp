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

#include "qe/nn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "qe/error.hpp"

namespace qe::nn {

Conv2d::Conv2d(int in_channels, int out_channels, int kernel_h, int kernel_w,
               ConvParams p, bool with_bias, bool spectral_norm)
    : weight(Shape{out_channels, in_channels, kernel_h, kernel_w}), params(p) {
  weight.set_requires_grad();
  if (with_bias) {
    bias = Tensor(Shape{1, out_channels, 1, 1});
    bias.set_requires_grad();
  }
  if (spectral_norm) {
    // Unit vector along the first axis until init_kaiming draws a random one.
    sn_u.assign(out_channels, 0.0);
    sn_u[0] = 1.0;
  }
}

Conv2d Conv2d::square(int in_channels, int out_channels, int kernel, int stride,
                      bool with_bias, bool spectral_norm) {
  ConvParams p{stride, stride, (kernel - 1) / 2, (kernel - 1) / 2};
  return Conv2d(in_channels, out_channels, kernel, kernel, p, with_bias, spectral_norm);
}

Tensor Conv2d::forward(const Tensor& x, bool update_sn) {
  if (sn_u.empty()) return conv2d(x, weight, bias, params);
  return conv2d(x, spectral_normalize(weight, sn_u, update_sn), bias, params);
}

void Conv2d::init_kaiming(std::mt19937_64& rng, double slope, double scale) {
  const Shape s = weight.shape();
  const double fan_in = static_cast<double>(s.c) * s.h * s.w;
  const double stddev = std::sqrt(2.0 / (1.0 + slope * slope)) / std::sqrt(fan_in);
  std::normal_distribution<double> dist(0.0, stddev * scale);
  for (auto& v : weight.mutable_values()) v = dist(rng);
  if (bias.defined()) std::fill(bias.mutable_values().begin(), bias.mutable_values().end(), 0.0);
  if (!sn_u.empty()) {
    std::normal_distribution<double> unit(0.0, 1.0);
    double norm = 0.0;
    for (auto& v : sn_u) {
      v = unit(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : sn_u) v /= std::max(norm, 1e-12);
  }
}

void Conv2d::zero() {
  std::fill(weight.mutable_values().begin(), weight.mutable_values().end(), 0.0);
  if (bias.defined()) std::fill(bias.mutable_values().begin(), bias.mutable_values().end(), 0.0);
}

void Conv2d::collect(const std::string& prefix, ParameterList& out) const {
  out.emplace_back(prefix + ".weight", weight);
  if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
}

void Conv2d::collect_buffers(const std::string& prefix, BufferList& out) {
  if (!sn_u.empty()) out.emplace_back(prefix + ".sn_u", &sn_u);
}

Adam::Adam(ParameterList params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& [name, p] : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  const double step = options_.lr / bc1;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k].second;
    if (!p.has_grad()) continue;
    auto values = p.mutable_values();
    const auto g = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i];
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i];
      values[i] -= step * m[i] / (std::sqrt(v[i] / bc2) + options_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

void Adam::save(TensorArchive& archive, const std::string& prefix) const {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto n = static_cast<std::int64_t>(m_[k].size());
    archive.tensors[prefix + ".m." + params_[k].first] = {{n}, m_[k]};
    archive.tensors[prefix + ".v." + params_[k].first] = {{n}, v_[k]};
  }
  archive.metadata[prefix + ".t"] = std::to_string(t_);
}

void Adam::load(const TensorArchive& archive, const std::string& prefix) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& m = archive.at(prefix + ".m." + params_[k].first);
    const auto& v = archive.at(prefix + ".v." + params_[k].first);
    if (m.values.size() != m_[k].size() || v.values.size() != v_[k].size()) {
      throw IoError("optimizer state for " + params_[k].first + " has the wrong size");
    }
    m_[k] = m.values;
    v_[k] = v.values;
  }
  auto it = archive.metadata.find(prefix + ".t");
  if (it == archive.metadata.end()) throw IoError("optimizer step counter missing");
  t_ = std::stoll(it->second);
}

void export_parameters(const ParameterList& params, const std::string& prefix,
                       TensorArchive& archive) {
  for (const auto& [name, p] : params) {
    const Shape s = p.shape();
    archive.tensors[prefix + name] = {{s.n, s.c, s.h, s.w},
                                      std::vector<double>(p.values().begin(), p.values().end())};
  }
}

void import_parameters(const ParameterList& params, const std::string& prefix,
                       const TensorArchive& archive) {
  for (const auto& [name, p] : params) {
    const auto& stored = archive.at(prefix + name);
    if (stored.values.size() != p.numel()) {
      throw IoError("architecture mismatch: " + prefix + name + " holds " +
                    std::to_string(stored.values.size()) + " values, expected " +
                    std::to_string(p.numel()));
    }
    Tensor handle = p;
    std::copy(stored.values.begin(), stored.values.end(), handle.mutable_values().begin());
  }
}

Tensor images_to_tensor(std::span<const ImageTensor> images) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  const ImageTensor& first = images.front();
  const Shape s{static_cast<int>(images.size()), first.channels(), first.height(), first.width()};
  std::vector<double> v(s.numel());
  for (int n = 0; n < s.n; ++n) {
    const ImageTensor& img = images[n];
    if (!img.same_shape(first)) throw ShapeError("images_to_tensor: batch images differ in shape");
    const auto px = img.pixels();
    double* dst = v.data() + static_cast<std::size_t>(n) * s.c * s.plane();
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        for (int c = 0; c < s.c; ++c) {
          dst[c * s.plane() + static_cast<std::size_t>(y) * s.w + x] =
              px[(static_cast<std::size_t>(y) * s.w + x) * s.c + c];
        }
      }
    }
  }
  return Tensor(s, std::move(v));
}

Tensor image_to_tensor(const ImageTensor& image) {
  return images_to_tensor(std::span<const ImageTensor>(&image, 1));
}

ImageTensor tensor_to_image(const Tensor& t, int n) {
  const Shape s = t.shape();
  if (n < 0 || n >= s.n) throw ShapeError("tensor_to_image: sample index out of range");
  std::vector<float> px(static_cast<std::size_t>(s.c) * s.plane());
  const double* src = t.values().data() + static_cast<std::size_t>(n) * s.c * s.plane();
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      for (int c = 0; c < s.c; ++c) {
        const double v = src[c * s.plane() + static_cast<std::size_t>(y) * s.w + x];
        px[(static_cast<std::size_t>(y) * s.w + x) * s.c + c] =
            static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return ImageTensor::from_pixels(s.h, s.w, s.c, std::move(px));
}

}  // namespace qe::nn
