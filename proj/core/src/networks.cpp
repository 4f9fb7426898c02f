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

#include "qe/networks.hpp"

#include <cmath>

#include "qe/error.hpp"

namespace qe {
namespace {

constexpr double kSlope = 0.2;

using nn::Conv2d;
using nn::Tensor;

Tensor lrelu(const Tensor& x) { return nn::leaky_relu(x, kSlope); }

}  // namespace

Generator::Generator(GeneratorConfig config) : config_(config) {
  if (config_.channels < 1 || config_.num_blocks < 0) {
    throw ConfigError("generator needs channels >= 1 and num_blocks >= 0");
  }
  if (config_.in_channels != config_.out_channels) {
    throw ConfigError("generator in_channels must equal out_channels");
  }
  const int c = config_.channels;
  conv_in_ = Conv2d::square(config_.in_channels, c, 3);
  for (int b = 0; b < config_.num_blocks; ++b) {
    blocks_.emplace_back(Conv2d::square(c, c, 3), Conv2d::square(c, c, 3));
  }
  conv_out_ = Conv2d::square(c, config_.out_channels, 3);
}

void Generator::init_random(std::mt19937_64& rng) {
  conv_in_.init_kaiming(rng, kSlope);
  for (auto& [a, b] : blocks_) {
    a.init_kaiming(rng, kSlope);
    b.init_kaiming(rng, kSlope, 0.1);
  }
  conv_out_.init_kaiming(rng, kSlope, 0.1);
}

Tensor Generator::forward(const Tensor& x) const {
  if (x.shape().c != config_.in_channels) {
    throw ShapeError("generator expects " + std::to_string(config_.in_channels) +
                     " channels, got " + x.shape().str());
  }
  Tensor h = lrelu(nn::conv2d(x, conv_in_.weight, conv_in_.bias, conv_in_.params));
  for (const auto& [a, b] : blocks_) {
    Tensor r = lrelu(nn::conv2d(h, a.weight, a.bias, a.params));
    h = nn::add(h, nn::conv2d(r, b.weight, b.bias, b.params));
  }
  return nn::add(x, nn::conv2d(h, conv_out_.weight, conv_out_.bias, conv_out_.params));
}

nn::ParameterList Generator::parameters() const {
  nn::ParameterList p;
  conv_in_.collect("conv_in", p);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    blocks_[b].first.collect("blocks." + std::to_string(b) + ".conv1", p);
    blocks_[b].second.collect("blocks." + std::to_string(b) + ".conv2", p);
  }
  conv_out_.collect("conv_out", p);
  return p;
}

ImageTensor enhance(const Generator& g, const ImageTensor& compressed) {
  if (compressed.channels() != g.config().in_channels) {
    throw ShapeError("enhance: image has " + std::to_string(compressed.channels()) +
                     " channels, generator expects " + std::to_string(g.config().in_channels));
  }
  nn::NoGradGuard no_grad;
  return nn::tensor_to_image(g.forward(nn::image_to_tensor(compressed)));
}

std::string_view disc_arch_name(DiscArch arch) {
  return arch == DiscArch::VggStyle ? "vgg_style" : "unet_style";
}

DiscArch parse_disc_arch(std::string_view name) {
  if (name == "vgg_style" || name == "VGG_STYLE") return DiscArch::VggStyle;
  if (name == "unet_style" || name == "UNET_STYLE") return DiscArch::UnetStyle;
  throw ConfigError("unknown discriminator arch '" + std::string(name) + "'");
}

Discriminator::Discriminator(DiscriminatorConfig config) : config_(config) {
  if (config_.channels < 1 || config_.image_channels < 1) {
    throw ConfigError("discriminator needs positive channel counts");
  }
  const int c = config_.channels;
  const bool sn = config_.spectral_norm;
  if (config_.arch == DiscArch::VggStyle) {
    if (config_.num_stages < 1) throw ConfigError("discriminator needs num_stages >= 1");
    convs_.push_back(Conv2d::square(config_.in_channels(), c, 3, 1, true, sn));
    int width = c;
    for (int s = 0; s < config_.num_stages; ++s) {
      const int next = std::min(width * 2, 8 * c);
      convs_.emplace_back(width, next, 4, 4, nn::ConvParams{2, 2, 1, 1}, true, sn);
      convs_.push_back(Conv2d::square(next, next, 3, 1, true, sn));
      width = next;
    }
    convs_.push_back(Conv2d::square(width, width, 1, 1, true, sn));
    convs_.push_back(Conv2d::square(width, 1, 1, 1, true, sn));
  } else {
    // Real-ESRGAN style U-Net; the first and last convs are not normalized.
    const nn::ConvParams down{2, 2, 1, 1};
    convs_.push_back(Conv2d::square(config_.in_channels(), c, 3));
    convs_.emplace_back(c, 2 * c, 4, 4, down, false, sn);
    convs_.emplace_back(2 * c, 4 * c, 4, 4, down, false, sn);
    convs_.emplace_back(4 * c, 8 * c, 4, 4, down, false, sn);
    convs_.push_back(Conv2d::square(8 * c, 4 * c, 3, 1, false, sn));
    convs_.push_back(Conv2d::square(4 * c, 2 * c, 3, 1, false, sn));
    convs_.push_back(Conv2d::square(2 * c, c, 3, 1, false, sn));
    convs_.push_back(Conv2d::square(c, c, 3, 1, false, sn));
    convs_.push_back(Conv2d::square(c, c, 3, 1, false, sn));
    convs_.push_back(Conv2d::square(c, 1, 3));
  }
}

void Discriminator::init_random(std::mt19937_64& rng) {
  for (auto& conv : convs_) conv.init_kaiming(rng, kSlope);
}

Tensor Discriminator::forward(const Tensor& image, const std::optional<Tensor>& condition,
                              bool update_sn) {
  if (image.shape().c != config_.image_channels) {
    throw ShapeError("discriminator expects " + std::to_string(config_.image_channels) +
                     "-channel images, got " + image.shape().str());
  }
  Tensor x = image;
  if (config_.conditional) {
    if (!condition) throw Error("condition missing for conditional discriminator");
    if (condition->shape() != image.shape()) {
      throw ShapeError("condition shape " + condition->shape().str() + " does not match image " +
                       image.shape().str());
    }
    const std::vector<Tensor> parts{image, *condition};
    x = nn::concat_channels(parts);
  } else if (condition) {
    throw Error("unconditional discriminator was given a condition");
  }
  return config_.arch == DiscArch::VggStyle ? forward_vgg(x, update_sn) : forward_unet(x, update_sn);
}

Tensor Discriminator::forward_vgg(const Tensor& x, bool update_sn) {
  Tensor h = x;
  const std::size_t spatial = convs_.size() - 2;
  for (std::size_t i = 0; i < spatial; ++i) h = lrelu(convs_[i].forward(h, update_sn));
  h = nn::global_avg_pool(h);
  h = lrelu(convs_[spatial].forward(h, update_sn));
  return convs_[spatial + 1].forward(h, update_sn);
}

Tensor Discriminator::forward_unet(const Tensor& x, bool update_sn) {
  const int h = x.shape().h, w = x.shape().w;
  const int ph = (8 - h % 8) % 8, pw = (8 - w % 8) % 8;
  if ((ph && ph >= h) || (pw && pw >= w)) {
    throw ShapeError("U-Net discriminator input too small for reflect padding: " + x.shape().str());
  }
  Tensor in = (ph || pw) ? nn::reflect_pad(x, ph, pw) : x;
  auto f = [&](int i, const Tensor& t) { return convs_[i].forward(t, update_sn); };
  Tensor x0 = lrelu(f(0, in));
  Tensor x1 = lrelu(f(1, x0));
  Tensor x2 = lrelu(f(2, x1));
  Tensor x3 = lrelu(f(3, x2));
  Tensor x4 = nn::add(lrelu(f(4, nn::upsample_nearest(x3, 2))), x2);
  Tensor x5 = nn::add(lrelu(f(5, nn::upsample_nearest(x4, 2))), x1);
  Tensor x6 = nn::add(lrelu(f(6, nn::upsample_nearest(x5, 2))), x0);
  Tensor out = f(9, lrelu(f(8, lrelu(f(7, x6)))));
  return (ph || pw) ? nn::crop(out, h, w) : out;
}

nn::ParameterList Discriminator::parameters() const {
  nn::ParameterList p;
  for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect("conv" + std::to_string(i), p);
  return p;
}

nn::BufferList Discriminator::buffers() {
  nn::BufferList b;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].collect_buffers("conv" + std::to_string(i), b);
  }
  return b;
}

std::vector<double> discriminate(Discriminator& d, const ImageTensor& image,
                                 const std::optional<ImageTensor>& condition) {
  nn::NoGradGuard no_grad;
  std::optional<Tensor> c;
  if (condition) {
    if (!condition->same_shape(image)) throw ShapeError("discriminate: condition shape mismatch");
    c = nn::image_to_tensor(*condition);
  }
  const Tensor logits = d.forward(nn::image_to_tensor(image), c);
  return {logits.values().begin(), logits.values().end()};
}

double realism_score(Discriminator& d, const ImageTensor& image,
                     const std::optional<ImageTensor>& condition) {
  const auto logits = discriminate(d, image, condition);
  double s = 0.0;
  for (double l : logits) s += 1.0 / (1.0 + std::exp(-l));
  return s / static_cast<double>(logits.size());
}

}  // namespace qe
