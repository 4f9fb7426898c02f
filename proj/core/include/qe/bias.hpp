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

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qe/features.hpp"
#include "qe/metrics.hpp"
#include "qe/networks.hpp"
#include "qe/types.hpp"

namespace qe {

struct RealismReport {
  double mean_score_raw = 0.0;
  double mean_score_enhanced = 0.0;
  double mean_score_compressed = 0.0;
  double delta_enh_to_raw = 0.0;
  double delta_comp_to_raw = 0.0;
  int patch_size = 0;
  int n_patches = 0;
};

/// Mean sigmoid scores over non-overlapping, top-left anchored tiles. A
/// conditional discriminator sees the compressed tile as the condition for
/// all three domains.
RealismReport realism_scores(Discriminator& d, std::span<const ImageTriplet> triplets,
                             int patch_size = 128, int jobs = 1);

/// (s_ce² − s_re²) / s_cr² × 100. Throws NumericError when s_cr is zero.
double deviation(double s_ce, double s_cr, double s_re);

struct TriangleReport {
  double s_ce = 0.0;
  double s_cr = 0.0;
  double s_re = 0.0;
  std::string metric_id;
  double deviation_pct = 0.0;
  std::string label;
};

TriangleReport make_triangle(double s_ce, double s_cr, double s_re, std::string metric_id,
                             std::string label = {});

/// FID triangle from precomputed set statistics.
TriangleReport triangle_report(const FeatureStats& raw, const FeatureStats& comp,
                               const FeatureStats& enh);

/// FID triangle over the pooled descriptor of `tap`; each set needs ≥ 2 images.
TriangleReport fid_triangle(std::span<const ImageTensor> raw, std::span<const ImageTensor> comp,
                            std::span<const ImageTensor> enh, const FeatureExtractor& extractor,
                            const FeatureTapSpec& tap, int jobs = 1);

/// LPIPS triangle: each side is the mean distance over aligned pairs.
TriangleReport lpips_triangle(std::span<const ImageTensor> raw, std::span<const ImageTensor> comp,
                              std::span<const ImageTensor> enh, const Lpips& lpips, int jobs = 1);

/// |a − b| · amplify, clipped to [0, 1].
ImageTensor residual_map(const ImageTensor& a, const ImageTensor& b, double amplify);

struct Apex {
  double x = 0.0;
  double y = 0.0;
  bool flattened = false;
};

/// Enhancement vertex with compression at (0, 0) and raw at (s_cr, 0).
/// Flattened onto the base when the sides cannot close a triangle.
Apex apex_position(const TriangleReport& r);

/// Writes an SVG with one triangle per report, each scaled to a unit base.
/// Returns warnings for triangles violating the triangle inequality by more
/// than 1% of s_cr.
std::vector<std::string> triangle_plot(std::span<const TriangleReport> reports,
                                       const std::filesystem::path& out_path);

/// Feature distances on evaluated triplets with the training distance:
/// mean absolute difference of ψ maps.
struct DomainDistances {
  double d_cr = 0.0;
  double d_ce = 0.0;
  double d_re = 0.0;
};
DomainDistances mean_domain_distances(std::span<const ImageTriplet> triplets,
                                      const FeatureExtractor& extractor, const FeatureTapSpec& tap,
                                      int jobs = 1);

}  // namespace qe
