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

#include "qe/stats.hpp"

#include <string>

#include "qe/error.hpp"

namespace qe {

FeatureStats feature_stats(std::span<const std::vector<double>> samples) {
  if (samples.size() < 2) {
    throw Error("insufficient samples: feature statistics need at least 2, got " +
                std::to_string(samples.size()));
  }
  const auto d = static_cast<Eigen::Index>(samples.front().size());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(samples.size()), d);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (static_cast<Eigen::Index>(samples[i].size()) != d) {
      throw ShapeError("feature_stats: sample " + std::to_string(i) + " has dimension " +
                       std::to_string(samples[i].size()) + ", expected " + std::to_string(d));
    }
    x.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(samples[i].data(), d);
  }
  FeatureStats s;
  s.n = static_cast<int>(samples.size());
  // Shift by the first sample before averaging: identical samples then give
  // an exactly zero covariance, and cancellation is milder for large offsets.
  const Eigen::RowVectorXd origin = x.row(0);
  const Eigen::MatrixXd shifted = x.rowwise() - origin;
  const Eigen::RowVectorXd shifted_mean = shifted.colwise().mean();
  s.mean = (origin + shifted_mean).transpose();
  const Eigen::MatrixXd centered = shifted.rowwise() - shifted_mean;
  s.cov = (centered.transpose() * centered) / static_cast<double>(s.n - 1);
  s.cov = 0.5 * (s.cov + s.cov.transpose()).eval();
  return s;
}

}  // namespace qe
