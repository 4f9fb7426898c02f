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

// Values below come from tests/reference/torch_reference.py: torchvision
// models in float64 on the same hash-initialised weights and input.

#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <numeric>

#include "qe/features.hpp"
#include "qe/metrics.hpp"

namespace qe {
namespace {

ImageTensor hash_image(int h, int w, std::uint64_t k) {
  const auto u = hash_uniform(k, static_cast<std::size_t>(h) * w * 3);
  std::vector<float> px(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) px[i] = static_cast<float>((u[i] + 1.0) / 2.0);
  return ImageTensor::from_pixels(h, w, 3, std::move(px));
}

struct Summary {
  double sum, abs_sum;
  std::vector<double> first;
};

void expect_summary(const std::vector<double>& v, std::size_t n, const Summary& s, double rtol) {
  ASSERT_EQ(v.size(), n);
  double sum = 0.0, abs_sum = 0.0;
  for (double x : v) {
    sum += x;
    abs_sum += std::abs(x);
  }
  EXPECT_NEAR(sum, s.sum, rtol * s.abs_sum);
  EXPECT_NEAR(abs_sum, s.abs_sum, rtol * s.abs_sum);
  for (std::size_t i = 0; i < s.first.size(); ++i) {
    EXPECT_NEAR(v[i], s.first[i], rtol * std::max(1.0, std::abs(s.first[i]))) << i;
  }
}

std::vector<double> tap(const VggBackbone& vgg, const ImageTensor& img, int block, bool pre) {
  nn::NoGradGuard ng;
  const nn::Tensor t = vgg.forward(nn::image_to_tensor(img), std::span<const int>(&block, 1), pre)[0];
  return {t.values().begin(), t.values().end()};
}

TEST(ReferenceTest, Vgg19MatchesTorchvision) {
  const VggBackbone vgg = VggBackbone::hashed(vgg19_layout());
  const ImageTensor x = hash_image(32, 32, 1000);
  expect_summary(tap(vgg, x, 5, true), 2048,
                 {8.180330231200358, 1058.9505443646592,
                  {-0.08512331741657328, 0.3866866784047882, 0.3606173984257637,
                   0.4358320094157513}},
                 1e-10);
  expect_summary(tap(vgg, x, 2, false), 32768, {32360.19995326294, 32360.19995326294, {}}, 1e-10);
}

TEST(ReferenceTest, LpipsMatchesReferenceFormula) {
  auto vgg = std::make_shared<const VggBackbone>(VggBackbone::hashed(vgg16_layout()));
  std::vector<std::vector<double>> lin;
  for (int k = 0; k < 5; ++k) {
    auto u = hash_uniform(5000 + k, vgg->block_width(k + 1));
    for (auto& w : u) w = (w + 1.0) / 2.0;
    lin.push_back(std::move(u));
  }
  const Lpips lpips(vgg, lin);
  const ImageTensor a = hash_image(32, 32, 1000), b = hash_image(32, 32, 1001);
  EXPECT_NEAR(lpips.distance(a, b), 0.8581888090062414, 1e-12);
  EXPECT_NEAR(lpips.distance(b, a), 0.8581888090062414, 1e-12);
}

TEST(ReferenceTest, InceptionPoolMatchesTorchvision) {
  const nn::TensorArchive arch = InceptionV3::hashed_archive();
  EXPECT_EQ(arch.tensors.size(), 470u);
  const InceptionV3 net = InceptionV3::from_archive(arch);
  expect_summary(net.pool(hash_image(32, 32, 1000)), 2048,
                 {3750.3550637793164, 3750.3550637793164,
                  {1.6340866404707932, 3.851602431784453, 4.339828042668874, 0.3421702817152175}},
                 1e-10);
}

}  // namespace
}  // namespace qe
