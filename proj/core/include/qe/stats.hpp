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

#include <Eigen/Core>
#include <span>
#include <vector>

namespace qe {

/// Gaussian summary of a feature set.
struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  int n = 0;

  int dim() const { return static_cast<int>(mean.size()); }
};

/// Sample mean and unbiased covariance (divisor n - 1), symmetrized. Throws
/// Error("insufficient samples") for fewer than two rows or ragged rows.
FeatureStats feature_stats(std::span<const std::vector<double>> samples);

}  // namespace qe
