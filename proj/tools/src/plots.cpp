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

#include "plots.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "qe/error.hpp"

namespace qe::cli {

void write_rd_plot(std::span<const RdCurve> curves, const std::filesystem::path& path) {
  constexpr double kW = 480, kH = 320, kMargin = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      x0 = std::min(x0, p.bpp);
      x1 = std::max(x1, p.bpp);
      y0 = std::min(y0, p.quality);
      y1 = std::max(y1, p.quality);
    }
  }
  if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x1 = x0 + 1;
  if (y1 - y0 < 1e-12) y1 = y0 + 1;
  auto px = [&](double x) { return kMargin + (x - x0) / (x1 - x0) * (kW - 2 * kMargin); };
  auto py = [&](double y) { return kH - kMargin - (y - y0) / (y1 - y0) * (kH - 2 * kMargin); };

  static const char* kColors[] = {"gray", "steelblue", "darkorange", "seagreen", "crimson"};
  std::ostringstream svg;
  svg << std::setprecision(4);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "  <rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kW - 2 * kMargin
      << "\" height=\"" << kH - 2 * kMargin << "\" fill=\"none\" stroke=\"black\"/>\n";
  svg << "  <text x=\"" << kW / 2 - 10 << "\" y=\"" << kH - 15 << "\">bpp</text>\n";
  const std::string metric = curves.empty() ? "" : curves.front().metric_id;
  svg << "  <text x=\"5\" y=\"" << kMargin - 10 << "\">" << metric << "</text>\n";
  svg << "  <text x=\"" << kMargin << "\" y=\"" << kH - kMargin + 14 << "\">" << x0 << "</text>\n";
  svg << "  <text x=\"" << kW - kMargin - 20 << "\" y=\"" << kH - kMargin + 14 << "\">" << x1
      << "</text>\n";
  svg << "  <text x=\"5\" y=\"" << kH - kMargin << "\">" << y0 << "</text>\n";
  svg << "  <text x=\"5\" y=\"" << kMargin + 10 << "\">" << y1 << "</text>\n";
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const char* color = kColors[k % 5];
    svg << "  <polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (const auto& p : curves[k].points) svg << px(p.bpp) << "," << py(p.quality) << " ";
    svg << "\"/>\n";
    for (const auto& p : curves[k].points) {
      svg << "  <circle cx=\"" << px(p.bpp) << "\" cy=\"" << py(p.quality) << "\" r=\"3\" fill=\""
          << color << "\"/>\n";
    }
    svg << "  <text x=\"" << kW - kMargin + 4 << "\" y=\"" << kMargin + 14 * (k + 1)
        << "\" fill=\"" << color << "\">" << curves[k].label << "</text>\n";
  }
  svg << "</svg>\n";
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << svg.str();
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace qe::cli
