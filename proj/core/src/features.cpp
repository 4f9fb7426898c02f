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

#include "qe/features.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

#include "qe/error.hpp"
#include "qe/parallel.hpp"

namespace qe {
namespace {

using nn::Tensor;

std::uint64_t splitmix64(std::uint64_t x) {
  std::uint64_t z = x + 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Tensor to_three_channels(const Tensor& x) {
  if (x.shape().c == 3) return x;
  if (x.shape().c != 1) {
    throw ShapeError("feature input must have 1 or 3 channels, got " + x.shape().str());
  }
  const std::vector<Tensor> parts{x, x, x};
  return nn::concat_channels(parts);
}

Tensor normalize_input(const Tensor& x, const InputNorm& norm) {
  std::array<double, 3> scale{}, shift{};
  for (int c = 0; c < 3; ++c) {
    scale[c] = 1.0 / norm.std[c];
    shift[c] = -norm.mean[c] / norm.std[c];
  }
  return nn::affine_channel(to_three_channels(x), scale, shift);
}

std::string vgg_name(int index, const char* leaf) {
  return "features." + std::to_string(index) + "." + leaf;
}

// torchvision index of every conv: conv/ReLU pairs, plus one pool per block.
std::vector<std::vector<int>> vgg_indices(const VggLayout& layout) {
  std::vector<std::vector<int>> out;
  int idx = 0;
  for (int n : layout.convs_per_block) {
    out.emplace_back();
    for (int j = 0; j < n; ++j) {
      out.back().push_back(idx);
      idx += 2;
    }
    idx += 1;
  }
  return out;
}

void check_layout(const VggLayout& layout) {
  if (layout.widths.empty() || layout.widths.size() != layout.convs_per_block.size()) {
    throw ConfigError("VGG layout needs one width per block");
  }
  for (std::size_t b = 0; b < layout.widths.size(); ++b) {
    if (layout.widths[b] < 1 || layout.convs_per_block[b] < 1) {
      throw ConfigError("VGG layout entries must be positive");
    }
  }
}

Tensor stored_to_tensor(const nn::StoredTensor& s, nn::Shape shape, const std::string& name) {
  if (s.values.size() != shape.numel()) {
    throw IoError("tensor '" + name + "' has " + std::to_string(s.values.size()) +
                  " values, expected shape " + shape.str());
  }
  return Tensor(shape, s.values);
}

struct UnitSpec {
  std::string name;
  int in, out, kh, kw, sh, sw, ph, pw;
};

std::vector<UnitSpec> inception_units() {
  std::vector<UnitSpec> u;
  auto add = [&](const std::string& n, int in, int out, int kh, int kw, int s = 1, int ph = 0,
                 int pw = 0) { u.push_back({n, in, out, kh, kw, s, s, ph, pw}); };
  add("Conv2d_1a_3x3", 3, 32, 3, 3, 2);
  add("Conv2d_2a_3x3", 32, 32, 3, 3);
  add("Conv2d_2b_3x3", 32, 64, 3, 3, 1, 1, 1);
  add("Conv2d_3b_1x1", 64, 80, 1, 1);
  add("Conv2d_4a_3x3", 80, 192, 3, 3);
  auto block_a = [&](const std::string& m, int in, int pool) {
    add(m + ".branch1x1", in, 64, 1, 1);
    add(m + ".branch5x5_1", in, 48, 1, 1);
    add(m + ".branch5x5_2", 48, 64, 5, 5, 1, 2, 2);
    add(m + ".branch3x3dbl_1", in, 64, 1, 1);
    add(m + ".branch3x3dbl_2", 64, 96, 3, 3, 1, 1, 1);
    add(m + ".branch3x3dbl_3", 96, 96, 3, 3, 1, 1, 1);
    add(m + ".branch_pool", in, pool, 1, 1);
  };
  block_a("Mixed_5b", 192, 32);
  block_a("Mixed_5c", 256, 64);
  block_a("Mixed_5d", 288, 64);
  add("Mixed_6a.branch3x3", 288, 384, 3, 3, 2);
  add("Mixed_6a.branch3x3dbl_1", 288, 64, 1, 1);
  add("Mixed_6a.branch3x3dbl_2", 64, 96, 3, 3, 1, 1, 1);
  add("Mixed_6a.branch3x3dbl_3", 96, 96, 3, 3, 2);
  auto block_c = [&](const std::string& m, int c7) {
    add(m + ".branch1x1", 768, 192, 1, 1);
    add(m + ".branch7x7_1", 768, c7, 1, 1);
    add(m + ".branch7x7_2", c7, c7, 1, 7, 1, 0, 3);
    add(m + ".branch7x7_3", c7, 192, 7, 1, 1, 3, 0);
    add(m + ".branch7x7dbl_1", 768, c7, 1, 1);
    add(m + ".branch7x7dbl_2", c7, c7, 7, 1, 1, 3, 0);
    add(m + ".branch7x7dbl_3", c7, c7, 1, 7, 1, 0, 3);
    add(m + ".branch7x7dbl_4", c7, c7, 7, 1, 1, 3, 0);
    add(m + ".branch7x7dbl_5", c7, 192, 1, 7, 1, 0, 3);
    add(m + ".branch_pool", 768, 192, 1, 1);
  };
  block_c("Mixed_6b", 128);
  block_c("Mixed_6c", 160);
  block_c("Mixed_6d", 160);
  block_c("Mixed_6e", 192);
  add("Mixed_7a.branch3x3_1", 768, 192, 1, 1);
  add("Mixed_7a.branch3x3_2", 192, 320, 3, 3, 2);
  add("Mixed_7a.branch7x7x3_1", 768, 192, 1, 1);
  add("Mixed_7a.branch7x7x3_2", 192, 192, 1, 7, 1, 0, 3);
  add("Mixed_7a.branch7x7x3_3", 192, 192, 7, 1, 1, 3, 0);
  add("Mixed_7a.branch7x7x3_4", 192, 192, 3, 3, 2);
  auto block_e = [&](const std::string& m, int in) {
    add(m + ".branch1x1", in, 320, 1, 1);
    add(m + ".branch3x3_1", in, 384, 1, 1);
    add(m + ".branch3x3_2a", 384, 384, 1, 3, 1, 0, 1);
    add(m + ".branch3x3_2b", 384, 384, 3, 1, 1, 1, 0);
    add(m + ".branch3x3dbl_1", in, 448, 1, 1);
    add(m + ".branch3x3dbl_2", 448, 384, 3, 3, 1, 1, 1);
    add(m + ".branch3x3dbl_3a", 384, 384, 1, 3, 1, 0, 1);
    add(m + ".branch3x3dbl_3b", 384, 384, 3, 1, 1, 1, 0);
    add(m + ".branch_pool", in, 192, 1, 1);
  };
  block_e("Mixed_7b", 1280);
  block_e("Mixed_7c", 2048);
  return u;
}

}  // namespace

std::vector<double> hash_uniform(std::uint64_t k, std::size_t count) {
  std::vector<double> v(count);
  for (std::size_t e = 0; e < count; ++e) {
    const std::uint64_t z = splitmix64((k << 32) | static_cast<std::uint64_t>(e));
    v[e] = static_cast<double>(z >> 11) * 0x1.0p-52 - 1.0;
  }
  return v;
}

VggLayout vgg19_layout() { return {{2, 2, 4, 4, 4}, {64, 128, 256, 512, 512}}; }
VggLayout vgg16_layout() { return {{2, 2, 3, 3, 3}, {64, 128, 256, 512, 512}}; }
VggLayout desk_vgg_layout() { return {{1, 1, 2, 2, 2}, {8, 16, 24, 32, 32}}; }

VggBackbone::VggBackbone(VggLayout layout) : layout_(std::move(layout)) {
  check_layout(layout_);
  int in = 3;
  for (std::size_t b = 0; b < layout_.widths.size(); ++b) {
    convs_.emplace_back();
    for (int j = 0; j < layout_.convs_per_block[b]; ++j) {
      nn::Conv2d c = nn::Conv2d::square(in, layout_.widths[b], 3);
      c.weight.set_requires_grad(false);
      c.bias.set_requires_grad(false);
      convs_.back().push_back(std::move(c));
      in = layout_.widths[b];
    }
  }
}

VggBackbone VggBackbone::seeded(VggLayout layout, std::uint64_t seed) {
  VggBackbone v(std::move(layout));
  std::mt19937_64 rng(seed);
  for (auto& block : v.convs_) {
    for (auto& c : block) c.init_kaiming(rng);
  }
  return v;
}

VggBackbone VggBackbone::hashed(VggLayout layout) {
  VggBackbone v(layout);
  nn::TensorArchive a = v.to_archive();
  std::uint64_t k = 0;
  for (auto& [name, t] : a.tensors) {
    const bool is_weight = name.size() > 6 && name.compare(name.size() - 6, 6, "weight") == 0;
    const double fan_in = is_weight ? static_cast<double>(t.shape[1] * t.shape[2] * t.shape[3]) : 1.0;
    const double scale = is_weight ? std::sqrt(6.0 / fan_in) : 0.1;
    t.values = hash_uniform(k++, t.values.size());
    for (auto& x : t.values) x *= scale;
  }
  return from_archive(a);
}

VggBackbone VggBackbone::from_archive(const nn::TensorArchive& archive) {
  static const std::regex key(R"(features\.(\d+)\.(weight|bias|running_mean))");
  std::vector<int> indices;
  for (const auto& [name, t] : archive.tensors) {
    std::smatch m;
    if (!std::regex_match(name, m, key)) continue;
    if (m[2] == "running_mean") {
      throw Error("unsupported tap backbone: batch-normalized VGG variants are not supported");
    }
    if (m[2] == "weight") indices.push_back(std::stoi(m[1]));
  }
  if (indices.empty()) throw IoError("weight file holds no VGG feature convolutions");
  std::sort(indices.begin(), indices.end());

  VggLayout layout;
  std::vector<std::vector<int>> groups{{indices[0]}};
  for (std::size_t i = 1; i < indices.size(); ++i) {
    if (indices[i] - indices[i - 1] == 2) {
      groups.back().push_back(indices[i]);
    } else {
      groups.push_back({indices[i]});
    }
  }
  for (const auto& g : groups) {
    const auto& w = archive.at(vgg_name(g.back(), "weight"));
    if (w.shape.size() != 4) throw IoError("VGG conv weights must be 4-d");
    layout.convs_per_block.push_back(static_cast<int>(g.size()));
    layout.widths.push_back(static_cast<int>(w.shape[0]));
  }
  VggBackbone v(layout);
  if (vgg_indices(layout) != groups) {
    throw IoError("VGG feature indices do not follow the conv/relu/pool pattern");
  }
  for (std::size_t b = 0; b < groups.size(); ++b) {
    for (std::size_t j = 0; j < groups[b].size(); ++j) {
      nn::Conv2d& c = v.convs_[b][j];
      const std::string wn = vgg_name(groups[b][j], "weight");
      const std::string bn = vgg_name(groups[b][j], "bias");
      c.weight = stored_to_tensor(archive.at(wn), c.weight.shape(), wn);
      c.bias = stored_to_tensor(archive.at(bn), c.bias.shape(), bn);
    }
  }
  return v;
}

VggBackbone VggBackbone::load(const std::filesystem::path& path) {
  return from_archive(nn::read_safetensors(path));
}

nn::TensorArchive VggBackbone::to_archive() const {
  nn::TensorArchive a;
  const auto idx = vgg_indices(layout_);
  for (std::size_t b = 0; b < convs_.size(); ++b) {
    for (std::size_t j = 0; j < convs_[b].size(); ++j) {
      const nn::Conv2d& c = convs_[b][j];
      const nn::Shape s = c.weight.shape();
      a.tensors[vgg_name(idx[b][j], "weight")] = {
          {s.n, s.c, s.h, s.w}, {c.weight.values().begin(), c.weight.values().end()}};
      a.tensors[vgg_name(idx[b][j], "bias")] = {{s.n},
                                                {c.bias.values().begin(), c.bias.values().end()}};
    }
  }
  return a;
}

void VggBackbone::save(const std::filesystem::path& path) const {
  nn::write_safetensors(to_archive(), path, nn::StorageType::F64);
}

std::vector<Tensor> VggBackbone::forward(const Tensor& x, std::span<const int> blocks,
                                         bool pre_activation, const InputNorm& norm) const {
  if (blocks.empty()) return {};
  const int deepest = *std::max_element(blocks.begin(), blocks.end());
  if (*std::min_element(blocks.begin(), blocks.end()) < 1 || deepest > num_blocks()) {
    throw Error("unsupported tap: VGG block index must be in [1, " + std::to_string(num_blocks()) +
                "]");
  }
  std::vector<Tensor> taps(static_cast<std::size_t>(deepest));
  Tensor y = normalize_input(x, norm);
  for (int b = 0; b < deepest; ++b) {
    if (b > 0) y = nn::max_pool2d(y, 2, 2);
    const auto& block = convs_[b];
    for (std::size_t j = 0; j < block.size(); ++j) {
      y = nn::conv2d(y, block[j].weight, block[j].bias, block[j].params);
      if (j + 1 == block.size() && pre_activation) taps[b] = y;
      y = nn::relu(y);
      if (j + 1 == block.size() && !pre_activation) taps[b] = y;
    }
  }
  std::vector<Tensor> out;
  for (int b : blocks) out.push_back(taps[b - 1]);
  return out;
}

InceptionV3 InceptionV3::from_archive(const nn::TensorArchive& archive) {
  InceptionV3 net;
  constexpr double kEps = 1e-3;
  for (const auto& s : inception_units()) {
    const auto& w = archive.at(s.name + ".conv.weight");
    const auto& gamma = archive.at(s.name + ".bn.weight");
    const auto& beta = archive.at(s.name + ".bn.bias");
    const auto& mu = archive.at(s.name + ".bn.running_mean");
    const auto& var = archive.at(s.name + ".bn.running_var");
    const nn::Shape ws{s.out, s.in, s.kh, s.kw};
    if (w.values.size() != ws.numel() || gamma.values.size() != static_cast<std::size_t>(s.out) ||
        beta.values.size() != gamma.values.size() || mu.values.size() != gamma.values.size() ||
        var.values.size() != gamma.values.size()) {
      throw IoError("architecture mismatch: InceptionV3 unit " + s.name + " has unexpected sizes");
    }
    std::vector<double> wf = w.values, bf(s.out);
    const std::size_t per_out = ws.numel() / s.out;
    for (int o = 0; o < s.out; ++o) {
      const double scale = gamma.values[o] / std::sqrt(var.values[o] + kEps);
      for (std::size_t i = 0; i < per_out; ++i) wf[o * per_out + i] *= scale;
      bf[o] = beta.values[o] - mu.values[o] * scale;
    }
    net.units_[s.name] = {Tensor(ws, std::move(wf)), Tensor({1, s.out, 1, 1}, std::move(bf)),
                          nn::ConvParams{s.sh, s.sw, s.ph, s.pw}};
  }
  return net;
}

InceptionV3 InceptionV3::load(const std::filesystem::path& path) {
  return from_archive(nn::read_safetensors(path));
}

nn::TensorArchive InceptionV3::hashed_archive() {
  nn::TensorArchive a;
  for (const auto& s : inception_units()) {
    a.tensors[s.name + ".conv.weight"] = {{s.out, s.in, s.kh, s.kw},
                                          std::vector<double>(static_cast<std::size_t>(s.out) * s.in * s.kh * s.kw)};
    for (const char* leaf : {".bn.weight", ".bn.bias", ".bn.running_mean", ".bn.running_var"}) {
      a.tensors[s.name + leaf] = {{s.out}, std::vector<double>(s.out)};
    }
  }
  auto ends_with = [](const std::string& s, const std::string& t) {
    return s.size() >= t.size() && s.compare(s.size() - t.size(), t.size(), t) == 0;
  };
  std::uint64_t k = 0;
  for (auto& [name, t] : a.tensors) {
    std::vector<double> u = hash_uniform(k++, t.values.size());
    if (ends_with(name, "conv.weight")) {
      const double scale = std::sqrt(6.0 / static_cast<double>(t.shape[1] * t.shape[2] * t.shape[3]));
      for (auto& x : u) x *= scale;
    } else if (ends_with(name, "bn.weight")) {
      for (auto& x : u) x = 1.0 + 0.1 * x;
    } else if (ends_with(name, "bn.running_var")) {
      for (auto& x : u) x = 1.0 + 0.5 * x;
    } else {
      for (auto& x : u) x *= 0.1;
    }
    t.values = std::move(u);
  }
  return a;
}

Tensor InceptionV3::unit(const std::string& name, const Tensor& x) const {
  const Unit& u = units_.at(name);
  return nn::relu(nn::conv2d(x, u.weight, u.bias, u.params));
}

Tensor InceptionV3::forward(const Tensor& x) const {
  nn::NoGradGuard no_grad;
  Tensor y = to_three_channels(x);
  if (y.shape().h != 299 || y.shape().w != 299) y = nn::resize_bilinear(y, 299, 299);
  const std::array<double, 3> two{2.0, 2.0, 2.0}, minus_one{-1.0, -1.0, -1.0};
  y = nn::affine_channel(y, two, minus_one);

  auto cat = [](std::vector<Tensor> parts) { return nn::concat_channels(parts); };
  auto avg3 = [](const Tensor& t) { return nn::avg_pool2d(t, 3, 1, 1, true); };

  y = unit("Conv2d_1a_3x3", y);
  y = unit("Conv2d_2a_3x3", y);
  y = unit("Conv2d_2b_3x3", y);
  y = nn::max_pool2d(y, 3, 2);
  y = unit("Conv2d_3b_1x1", y);
  y = unit("Conv2d_4a_3x3", y);
  y = nn::max_pool2d(y, 3, 2);
  for (const char* m : {"Mixed_5b", "Mixed_5c", "Mixed_5d"}) {
    const std::string p = std::string(m) + ".";
    Tensor b1 = unit(p + "branch1x1", y);
    Tensor b5 = unit(p + "branch5x5_2", unit(p + "branch5x5_1", y));
    Tensor b3 = unit(p + "branch3x3dbl_3", unit(p + "branch3x3dbl_2", unit(p + "branch3x3dbl_1", y)));
    Tensor bp = unit(p + "branch_pool", avg3(y));
    y = cat({b1, b5, b3, bp});
  }
  {
    Tensor b3 = unit("Mixed_6a.branch3x3", y);
    Tensor bd = unit("Mixed_6a.branch3x3dbl_3",
                     unit("Mixed_6a.branch3x3dbl_2", unit("Mixed_6a.branch3x3dbl_1", y)));
    y = cat({b3, bd, nn::max_pool2d(y, 3, 2)});
  }
  for (const char* m : {"Mixed_6b", "Mixed_6c", "Mixed_6d", "Mixed_6e"}) {
    const std::string p = std::string(m) + ".";
    Tensor b1 = unit(p + "branch1x1", y);
    Tensor b7 = unit(p + "branch7x7_3", unit(p + "branch7x7_2", unit(p + "branch7x7_1", y)));
    Tensor bd = y;
    for (int i = 1; i <= 5; ++i) bd = unit(p + "branch7x7dbl_" + std::to_string(i), bd);
    Tensor bp = unit(p + "branch_pool", avg3(y));
    y = cat({b1, b7, bd, bp});
  }
  {
    Tensor b3 = unit("Mixed_7a.branch3x3_2", unit("Mixed_7a.branch3x3_1", y));
    Tensor b7 = y;
    for (int i = 1; i <= 4; ++i) b7 = unit("Mixed_7a.branch7x7x3_" + std::to_string(i), b7);
    y = cat({b3, b7, nn::max_pool2d(y, 3, 2)});
  }
  for (const char* m : {"Mixed_7b", "Mixed_7c"}) {
    const std::string p = std::string(m) + ".";
    Tensor b1 = unit(p + "branch1x1", y);
    Tensor s3 = unit(p + "branch3x3_1", y);
    Tensor b3 = cat({unit(p + "branch3x3_2a", s3), unit(p + "branch3x3_2b", s3)});
    Tensor sd = unit(p + "branch3x3dbl_2", unit(p + "branch3x3dbl_1", y));
    Tensor bd = cat({unit(p + "branch3x3dbl_3a", sd), unit(p + "branch3x3dbl_3b", sd)});
    Tensor bp = unit(p + "branch_pool", avg3(y));
    y = cat({b1, b3, bd, bp});
  }
  return nn::global_avg_pool(y);
}

std::vector<double> InceptionV3::pool(const ImageTensor& image) const {
  Tensor f = forward(nn::image_to_tensor(image));
  return {f.values().begin(), f.values().end()};
}

std::vector<double> PooledVgg::pool(const ImageTensor& image) const {
  nn::NoGradGuard no_grad;
  const int last = vgg_->num_blocks();
  Tensor f = nn::global_avg_pool(
      vgg_->forward(nn::image_to_tensor(image), std::span<const int>(&last, 1), false)[0]);
  return {f.values().begin(), f.values().end()};
}

FeatureExtractor::FeatureExtractor(std::shared_ptr<const VggBackbone> vgg,
                                   std::shared_ptr<const PooledBackbone> pooled)
    : vgg_(std::move(vgg)), pooled_(std::move(pooled)) {}

const VggBackbone& FeatureExtractor::vgg() const {
  if (!vgg_) throw Error("extractor unavailable: no VGG weights loaded");
  return *vgg_;
}

const PooledBackbone& FeatureExtractor::pooled() const {
  if (!pooled_) throw Error("extractor unavailable: no pooled backbone loaded");
  return *pooled_;
}

void FeatureExtractor::check_tap(const FeatureTapSpec& tap) const {
  if (tap.backbone == Backbone::Vgg19 && (tap.block < 1 || tap.block > vgg().num_blocks())) {
    throw Error("unsupported tap: VGG block " + std::to_string(tap.block));
  }
}

Tensor FeatureExtractor::features(const Tensor& x, const FeatureTapSpec& tap) const {
  if (tap.backbone != Backbone::Vgg19) {
    throw Error("unsupported tap: only VGG taps are differentiable spatial features");
  }
  check_tap(tap);
  return vgg().forward(x, std::span<const int>(&tap.block, 1), tap.pre_activation)[0];
}

FeatureMap FeatureExtractor::extract(const ImageTensor& image, const FeatureTapSpec& tap) const {
  FeatureMap m;
  m.tap = tap;
  if (tap.backbone == Backbone::InceptionPool) {
    m.data = pooled().pool(image.to_rgb());
    m.channels = static_cast<int>(m.data.size());
    return m;
  }
  nn::NoGradGuard no_grad;
  Tensor f = features(nn::image_to_tensor(image.to_rgb()), tap);
  const nn::Shape s = f.shape();
  m.height = s.h;
  m.width = s.w;
  m.channels = s.c;
  m.data.resize(s.numel());
  for (int c = 0; c < s.c; ++c) {
    for (std::size_t p = 0; p < s.plane(); ++p) m.data[p * s.c + c] = f.values()[c * s.plane() + p];
  }
  return m;
}

std::vector<double> FeatureExtractor::descriptor(const ImageTensor& image,
                                                 const FeatureTapSpec& tap) const {
  if (tap.backbone == Backbone::InceptionPool) return pooled().pool(image.to_rgb());
  nn::NoGradGuard no_grad;
  Tensor f = nn::global_avg_pool(features(nn::image_to_tensor(image.to_rgb()), tap));
  return {f.values().begin(), f.values().end()};
}

FeatureStats extract_dataset_stats(std::span<const ImageTensor> images, const FeatureTapSpec& tap,
                                   const FeatureExtractor& extractor, int jobs) {
  if (images.size() < 2) {
    throw Error("insufficient samples: need at least 2 images, got " +
                std::to_string(images.size()));
  }
  std::vector<std::vector<double>> rows(images.size());
  parallel_for(images.size(), jobs,
               [&](std::size_t i) { rows[i] = extractor.descriptor(images[i], tap); });
  return feature_stats(rows);
}

}  // namespace qe
