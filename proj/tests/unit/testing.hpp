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

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "qe/image.hpp"
#include "qe/nn/tensor.hpp"

namespace qe::testing {

/// Random tensor with entries uniform in [lo, hi).
inline nn::Tensor random_tensor(std::mt19937_64& rng, nn::Shape s, double lo = -1.0,
                                double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(s.numel());
  for (auto& x : v) x = u(rng);
  return nn::Tensor(s, std::move(v));
}

inline ImageTensor random_image(std::mt19937_64& rng, int h, int w, int c = 3,
                                float lo = 0.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> px(static_cast<std::size_t>(h) * w * c);
  for (auto& x : px) x = u(rng);
  return ImageTensor::from_pixels(h, w, c, std::move(px));
}

struct GradCheck {
  double rel_error = 0.0;
  double analytic_norm = 0.0;
};

/// Compares the analytic gradient of a scalar function with central
/// differences on every element of `inputs`. The error is
/// ||g_a - g_n|| / max(||g_a||, ||g_n||, floor).
inline GradCheck grad_check(const std::function<nn::Tensor(const std::vector<nn::Tensor>&)>& f,
                            std::vector<nn::Tensor> inputs, double h = 1e-6,
                            double floor = 1e-8) {
  for (auto& t : inputs) {
    t.zero_grad();
    t.set_requires_grad();
  }
  f(inputs).backward();
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) analytic.assign(t.grad().begin(), t.grad().end());
    auto vals = t.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double keep = vals[i];
      double fp, fm;
      {
        nn::NoGradGuard ng;
        vals[i] = keep + h;
        fp = f(inputs).item();
        vals[i] = keep - h;
        fm = f(inputs).item();
      }
      vals[i] = keep;
      const double num = (fp - fm) / (2.0 * h);
      diff2 += (num - analytic[i]) * (num - analytic[i]);
      a2 += analytic[i] * analytic[i];
      n2 += num * num;
    }
  }
  GradCheck out;
  out.analytic_norm = std::sqrt(a2);
  out.rel_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), floor});
  return out;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("qe_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace qe::testing
