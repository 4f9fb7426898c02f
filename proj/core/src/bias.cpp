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

#include "qe/bias.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "qe/error.hpp"
#include "qe/parallel.hpp"
#include "qe/stats.hpp"

namespace qe {
namespace {

const ImageTensor& enhanced_of(const ImageTriplet& t) {
  if (!t.enhanced) throw Error("missing enhanced image for source_id " + t.source_id);
  return *t.enhanced;
}

double mean_abs_diff(const FeatureMap& a, const FeatureMap& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += std::abs(a.data[i] - b.data[i]);
  return s / static_cast<double>(a.data.size());
}

void check_sets(std::span<const ImageTensor> raw, std::span<const ImageTensor> comp,
                std::span<const ImageTensor> enh, std::size_t min) {
  if (raw.size() < min || comp.size() < min || enh.size() < min) {
    throw Error("insufficient samples: triangle needs at least " + std::to_string(min) +
                " images per set");
  }
}

}  // namespace

RealismReport realism_scores(Discriminator& d, std::span<const ImageTriplet> triplets,
                             int patch_size, int jobs) {
  if (patch_size < 1) throw ConfigError("patch size must be positive");
  struct Tile {
    std::size_t triplet;
    int y, x;
  };
  std::vector<Tile> tiles;
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const ImageTriplet& t = triplets[i];
    enhanced_of(t);
    const int h = t.raw.height(), w = t.raw.width();
    if (h < patch_size || w < patch_size) {
      throw Error("patch larger than image for source_id " + t.source_id);
    }
    for (int y = 0; y + patch_size <= h; y += patch_size) {
      for (int x = 0; x + patch_size <= w; x += patch_size) tiles.push_back({i, y, x});
    }
  }
  if (tiles.empty()) throw Error("no patches to score");
  const bool conditional = d.config().conditional;
  std::vector<std::array<double, 3>> scores(tiles.size());
  parallel_for(tiles.size(), jobs, [&](std::size_t k) {
    const Tile& tile = tiles[k];
    const ImageTriplet& t = triplets[tile.triplet];
    auto crop = [&](const ImageTensor& img) { return img.crop(tile.y, tile.x, patch_size, patch_size); };
    const ImageTensor c = crop(t.compressed);
    std::optional<ImageTensor> cond;
    if (conditional) cond = c;
    scores[k] = {realism_score(d, crop(t.raw), cond), realism_score(d, crop(*t.enhanced), cond),
                 realism_score(d, c, cond)};
  });
  RealismReport r;
  for (const auto& s : scores) {
    r.mean_score_raw += s[0];
    r.mean_score_enhanced += s[1];
    r.mean_score_compressed += s[2];
  }
  const double n = static_cast<double>(scores.size());
  r.mean_score_raw /= n;
  r.mean_score_enhanced /= n;
  r.mean_score_compressed /= n;
  r.delta_enh_to_raw = r.mean_score_enhanced - r.mean_score_raw;
  r.delta_comp_to_raw = r.mean_score_compressed - r.mean_score_raw;
  r.patch_size = patch_size;
  r.n_patches = static_cast<int>(scores.size());
  return r;
}

double deviation(double s_ce, double s_cr, double s_re) {
  if (!(s_cr > 0.0)) throw NumericError("undefined deviation: s_cr must be positive");
  // Ratios first, in extended precision, so a common scale factor cancels.
  const long double a = static_cast<long double>(s_ce) / s_cr;
  const long double b = static_cast<long double>(s_re) / s_cr;
  return static_cast<double>((a - b) * (a + b) * 100.0L);
}

TriangleReport make_triangle(double s_ce, double s_cr, double s_re, std::string metric_id,
                             std::string label) {
  if (s_ce < 0 || s_cr < 0 || s_re < 0) throw NumericError("negative domain distance");
  TriangleReport r{s_ce, s_cr, s_re, std::move(metric_id), 0.0, std::move(label)};
  r.deviation_pct = deviation(s_ce, s_cr, s_re);
  return r;
}

TriangleReport triangle_report(const FeatureStats& raw, const FeatureStats& comp,
                               const FeatureStats& enh) {
  return make_triangle(fid(comp, enh), fid(comp, raw), fid(raw, enh), "fid");
}

TriangleReport fid_triangle(std::span<const ImageTensor> raw, std::span<const ImageTensor> comp,
                            std::span<const ImageTensor> enh, const FeatureExtractor& extractor,
                            const FeatureTapSpec& tap, int jobs) {
  check_sets(raw, comp, enh, 2);
  return triangle_report(extract_dataset_stats(raw, tap, extractor, jobs),
                         extract_dataset_stats(comp, tap, extractor, jobs),
                         extract_dataset_stats(enh, tap, extractor, jobs));
}

TriangleReport lpips_triangle(std::span<const ImageTensor> raw, std::span<const ImageTensor> comp,
                              std::span<const ImageTensor> enh, const Lpips& lpips, int jobs) {
  check_sets(raw, comp, enh, 1);
  if (raw.size() != comp.size() || raw.size() != enh.size()) {
    throw ShapeError("lpips triangle needs aligned sets of equal size");
  }
  std::vector<std::array<double, 3>> d(raw.size());
  parallel_for(raw.size(), jobs, [&](std::size_t i) {
    d[i] = {lpips.distance(comp[i], enh[i]), lpips.distance(comp[i], raw[i]),
            lpips.distance(raw[i], enh[i])};
  });
  std::array<double, 3> s{0, 0, 0};
  for (const auto& v : d) {
    for (int k = 0; k < 3; ++k) s[k] += v[k];
  }
  const double n = static_cast<double>(d.size());
  return make_triangle(s[0] / n, s[1] / n, s[2] / n, "lpips");
}

ImageTensor residual_map(const ImageTensor& a, const ImageTensor& b, double amplify) {
  if (!a.same_shape(b)) throw ShapeError("residual_map: shape mismatch");
  std::vector<float> out(a.pixels().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double r = std::abs(static_cast<double>(a.pixels()[i]) - b.pixels()[i]) * amplify;
    out[i] = static_cast<float>(std::clamp(r, 0.0, 1.0));
  }
  return ImageTensor::from_pixels(a.height(), a.width(), a.channels(), std::move(out));
}

Apex apex_position(const TriangleReport& r) {
  if (!(r.s_cr > 0.0)) throw NumericError("undefined deviation: s_cr must be positive");
  Apex a;
  a.x = (r.s_ce * r.s_ce - r.s_re * r.s_re + r.s_cr * r.s_cr) / (2.0 * r.s_cr);
  const double h2 = r.s_ce * r.s_ce - a.x * a.x;
  if (h2 < 0.0) {
    a.flattened = true;
    a.y = 0.0;
  } else {
    a.y = std::sqrt(h2);
  }
  return a;
}

std::vector<std::string> triangle_plot(std::span<const TriangleReport> reports,
                                       const std::filesystem::path& out_path) {
  std::vector<std::string> warnings;
  const double cell_w = 260, cell_h = 240, margin = 30, base = 200;
  const double width = std::max<double>(1, reports.size()) * cell_w;
  std::ostringstream svg;
  svg << std::fixed << std::setprecision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << cell_h
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const TriangleReport& r = reports[i];
    const double slack = r.s_ce + r.s_re - r.s_cr;
    const bool violated = slack < -0.01 * r.s_cr || std::abs(r.s_ce - r.s_re) > 1.01 * r.s_cr;
    const Apex apex = apex_position(r);
    if (violated) {
      warnings.push_back("triangle inequality violated for " +
                         (r.label.empty() ? r.metric_id : r.label) + "; apex flattened");
    }
    const double ox = i * cell_w + margin, oy = cell_h - margin - 20;
    const double ax = ox + base * apex.x / r.s_cr, ay = oy - base * apex.y / r.s_cr;
    const double rx = ox + base;
    svg << "  <line x1=\"" << ox << "\" y1=\"" << oy << "\" x2=\"" << rx << "\" y2=\"" << oy
        << "\" stroke=\"black\"/>\n";
    svg << "  <polyline fill=\"none\" stroke=\"" << (violated ? "red" : "steelblue") << "\" points=\""
        << ox << "," << oy << " " << ax << "," << ay << " " << rx << "," << oy << "\"/>\n";
    svg << "  <line x1=\"" << ox + base / 2 << "\" y1=\"" << oy << "\" x2=\"" << ox + base / 2
        << "\" y2=\"" << oy - base * 0.9 << "\" stroke=\"gray\" stroke-dasharray=\"3,3\"/>\n";
    svg << "  <circle cx=\"" << ax << "\" cy=\"" << ay << "\" r=\"3\"/>\n";
    svg << "  <text x=\"" << ox - 8 << "\" y=\"" << oy + 14 << "\">C</text>\n";
    svg << "  <text x=\"" << rx << "\" y=\"" << oy + 14 << "\">R</text>\n";
    svg << "  <text x=\"" << ax + 5 << "\" y=\"" << ay - 5 << "\">E</text>\n";
    svg << "  <text x=\"" << ox << "\" y=\"" << cell_h - 12 << "\">"
        << (r.label.empty() ? "" : r.label + " ") << r.metric_id << " deviation "
        << r.deviation_pct << "%</text>\n";
  }
  svg << "</svg>\n";
  if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
  std::ofstream out(out_path);
  out << svg.str();
  if (!out) throw IoError("cannot write " + out_path.string());
  return warnings;
}

DomainDistances mean_domain_distances(std::span<const ImageTriplet> triplets,
                                      const FeatureExtractor& extractor, const FeatureTapSpec& tap,
                                      int jobs) {
  if (triplets.empty()) throw Error("insufficient samples: no triplets");
  std::vector<DomainDistances> d(triplets.size());
  parallel_for(triplets.size(), jobs, [&](std::size_t i) {
    const ImageTriplet& t = triplets[i];
    const FeatureMap e = extractor.extract(enhanced_of(t), tap);
    const FeatureMap r = extractor.extract(t.raw, tap);
    const FeatureMap c = extractor.extract(t.compressed, tap);
    d[i] = {mean_abs_diff(r, c), mean_abs_diff(e, c), mean_abs_diff(r, e)};
  });
  DomainDistances out;
  for (const auto& v : d) {
    out.d_cr += v.d_cr;
    out.d_ce += v.d_ce;
    out.d_re += v.d_re;
  }
  const double n = static_cast<double>(d.size());
  out.d_cr /= n;
  out.d_ce /= n;
  out.d_re /= n;
  return out;
}

}  // namespace qe
