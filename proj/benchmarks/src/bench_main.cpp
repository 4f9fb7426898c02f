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

#include <benchmark/benchmark.h>

#include <memory>
#include <random>

#include "qe/codec.hpp"
#include "qe/metrics.hpp"
#include "qe/nn/ops.hpp"
#include "qe/trainer.hpp"

namespace qe {
namespace {

nn::Tensor filled(nn::Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(s.numel());
  for (auto& x : v) x = u(rng);
  return nn::Tensor(s, std::move(v));
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  auto x = filled({8, c, 32, 32}, 1);
  auto w = filled({c, c, 3, 3}, 2);
  auto b = filled({1, c, 1, 1}, 3);
  x.set_requires_grad();
  w.set_requires_grad();
  b.set_requires_grad();
  for (auto _ : state) {
    auto y = nn::mean(nn::conv2d(x, w, b, {1, 1, 1, 1}));
    y.backward();
    benchmark::DoNotOptimize(w.grad().data());
    x.zero_grad();
    w.zero_grad();
    b.zero_grad();
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Fid(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  auto stats = [&] {
    Eigen::MatrixXd a(d, d + 8);
    for (int i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
    FeatureStats s;
    s.mean = Eigen::VectorXd::Zero(d);
    s.cov = a * a.transpose() / (d + 8);
    s.n = d + 9;
    return s;
  };
  const auto a = stats(), b = stats();
  for (auto _ : state) benchmark::DoNotOptimize(fid(a, b));
}
BENCHMARK(BM_Fid)->Arg(64)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_JpegRoundTrip(benchmark::State& state) {
  const auto img = synthetic_image(256, 256, 5);
  for (auto _ : state) benchmark::DoNotOptimize(compress(img, {CodecId::Jpeg, 10}).bpp);
}
BENCHMARK(BM_JpegRoundTrip)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  std::vector<ImageTriplet> data(8);
  for (int i = 0; i < 8; ++i) {
    data[i].raw = synthetic_image(64, 64, i);
    data[i].compressed = compress(data[i].raw, {CodecId::Jpeg, 10}).image;
    data[i].source_id = "b" + std::to_string(i);
  }
  const auto vgg = std::make_shared<VggBackbone>(VggBackbone::seeded(desk_vgg_layout(), 7));
  const FeatureExtractor ex(vgg);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.patch_size = 32;
  cfg.generator.channels = 16;
  cfg.generator.num_blocks = 3;
  cfg.discriminator.channels = 16;
  cfg.discriminator.num_stages = 3;
  cfg.steps = 1 << 20;
  TrainState s = init_train_state(cfg);
  int target = 0;
  for (auto _ : state) train_steps(s, cfg, data, &ex, ++target, {});
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace qe

BENCHMARK_MAIN();
