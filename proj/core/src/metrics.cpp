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

#include "qe/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "qe/error.hpp"

namespace qe {
namespace {

Eigen::VectorXd sym_eigenvalues(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError(std::string(what) + ": eigensolver failed");
  return es.eigenvalues();
}

double negative_tolerance(const Eigen::VectorXd& eig) {
  return 1e-6 * std::max(1.0, eig.size() ? eig.maxCoeff() : 0.0);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw NumericError("fid: eigensolver failed");
  Eigen::VectorXd ev = es.eigenvalues();
  if (ev.size() && ev.minCoeff() < -negative_tolerance(ev)) {
    throw NumericError("fid: covariance is not positive semidefinite (eigenvalue " +
                       std::to_string(ev.minCoeff()) + ")");
  }
  ev = ev.cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// Polynomial coefficients c0..c3 of the least-squares cubic through (x, y).
Eigen::Vector4d cubic_fit(const std::vector<double>& x, const std::vector<double>& y,
                          double& condition) {
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd v(n, 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int k = 0; k < 4; ++k) v(i, k) = std::pow(x[i], k);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(v, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  condition = s(s.size() - 1) > 0 ? s(0) / s(s.size() - 1) : INFINITY;
  return svd.solve(Eigen::Map<const Eigen::VectorXd>(y.data(), n));
}

double cubic_integral(const Eigen::Vector4d& c, double lo, double hi) {
  auto prim = [&](double t) {
    return c(0) * t + c(1) * t * t / 2 + c(2) * t * t * t / 3 + c(3) * t * t * t * t / 4;
  };
  return prim(hi) - prim(lo);
}

// Fritsch-Carlson monotone slopes.
std::vector<double> pchip_slopes(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  std::vector<double> h(n - 1), delta(n - 1), d(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    h[i] = x[i + 1] - x[i];
    delta[i] = (y[i + 1] - y[i]) / h[i];
  }
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (delta[i - 1] * delta[i] > 0) {
      const double w1 = 2 * h[i] + h[i - 1], w2 = h[i] + 2 * h[i - 1];
      d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
    }
  }
  auto edge = [](double h0, double h1, double d0, double d1) {
    double s = ((2 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if (s * d0 <= 0) return 0.0;
    if (d0 * d1 <= 0 && std::abs(s) > std::abs(3 * d0)) return 3 * d0;
    return s;
  };
  if (n == 2) {
    d[0] = d[1] = delta[0];
  } else {
    d[0] = edge(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = edge(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
  }
  return d;
}

// Integral of the Hermite interpolant over [lo, hi] (Simpson is exact on cubics).
double pchip_integral(const std::vector<double>& x, const std::vector<double>& y, double lo,
                      double hi) {
  const auto d = pchip_slopes(x, y);
  auto eval = [&](std::size_t i, double t) {
    const double h = x[i + 1] - x[i], s = (t - x[i]) / h;
    const double h00 = (1 + 2 * s) * (1 - s) * (1 - s), h10 = s * (1 - s) * (1 - s);
    const double h01 = s * s * (3 - 2 * s), h11 = s * s * (s - 1);
    return h00 * y[i] + h10 * h * d[i] + h01 * y[i + 1] + h11 * h * d[i + 1];
  };
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < x.size(); ++i) {
    const double a = std::max(lo, x[i]), b = std::min(hi, x[i + 1]);
    if (b <= a) continue;
    total += (b - a) / 6.0 * (eval(i, a) + 4 * eval(i, (a + b) / 2) + eval(i, b));
  }
  return total;
}

struct Prepared {
  std::vector<double> q;  // sorted ascending
  std::vector<double> log_rate;
};

Prepared prepare(const RdCurve& c, const char* which) {
  if (c.points.size() < 4) {
    throw Error(std::string("insufficient points: ") + which + " curve '" + c.label + "' has " +
                std::to_string(c.points.size()) + ", BD-BR needs at least 4");
  }
  std::vector<std::pair<double, double>> pts;
  for (const auto& p : c.points) {
    if (!(p.bpp > 0) || !std::isfinite(p.quality)) {
      throw NumericError(std::string("invalid RD point on ") + which + " curve '" + c.label + "'");
    }
    pts.emplace_back(c.higher_is_better ? p.quality : -p.quality, std::log(p.bpp));
  }
  std::sort(pts.begin(), pts.end());
  Prepared out;
  for (const auto& [q, r] : pts) {
    if (!out.q.empty() && q - out.q.back() <= 1e-12 * std::max(1.0, std::abs(q))) {
      throw NumericError(std::string("degenerate quality axis on ") + which + " curve '" +
                         c.label + "': repeated quality values");
    }
    out.q.push_back(q);
    out.log_rate.push_back(r);
  }
  return out;
}

// Average log-rate over [lo, hi], scaling quality to [-1, 1] for conditioning.
double mean_log_rate(const Prepared& p, double lo, double hi) {
  const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
  std::vector<double> x(p.q.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (p.q[i] - mid) / half;
  double condition = 0.0;
  const Eigen::Vector4d c = cubic_fit(x, p.log_rate, condition);
  if (condition < 1e8 && c.allFinite()) return cubic_integral(c, -1.0, 1.0) / 2.0;
  return pchip_integral(x, p.log_rate, -1.0, 1.0) / 2.0;
}

}  // namespace

double psnr(const ImageTensor& a, const ImageTensor& b, double peak) {
  if (!a.same_shape(b)) throw ShapeError("psnr: shape mismatch");
  const auto pa = a.pixels(), pb = b.pixels();
  double se = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(pa.size());
  if (mse < 1e-10) return 100.0;
  return std::min(100.0, 10.0 * std::log10(peak * peak / mse));
}

double fid(const FeatureStats& a, const FeatureStats& b) {
  if (a.dim() != b.dim()) {
    throw ShapeError("fid: dimension mismatch " + std::to_string(a.dim()) + " vs " +
                     std::to_string(b.dim()));
  }
  if (a.mean == b.mean && a.cov == b.cov) return 0.0;
  const Eigen::MatrixXd sa = psd_sqrt(a.cov);
  Eigen::MatrixXd m = sa * b.cov * sa;
  m = 0.5 * (m + m.transpose()).eval();
  const Eigen::VectorXd ev = sym_eigenvalues(m, "fid");
  if (ev.size() && ev.minCoeff() < -negative_tolerance(ev)) {
    throw NumericError("fid: product of covariances has eigenvalue " + std::to_string(ev.minCoeff()));
  }
  const double tr_sqrt = ev.cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, d);
}

Lpips::Lpips(std::shared_ptr<const VggBackbone> vgg) : vgg_(std::move(vgg)) {
  if (!vgg_) throw Error("extractor unavailable: LPIPS needs VGG weights");
  for (int b = 1; b <= vgg_->num_blocks(); ++b) weights_.emplace_back(vgg_->block_width(b), 1.0);
}

Lpips::Lpips(std::shared_ptr<const VggBackbone> vgg, std::vector<std::vector<double>> weights)
    : vgg_(std::move(vgg)), weights_(std::move(weights)) {
  if (!vgg_) throw Error("extractor unavailable: LPIPS needs VGG weights");
  if (static_cast<int>(weights_.size()) != vgg_->num_blocks()) {
    throw ConfigError("LPIPS needs one weight vector per VGG block");
  }
  for (int b = 1; b <= vgg_->num_blocks(); ++b) {
    if (static_cast<int>(weights_[b - 1].size()) != vgg_->block_width(b)) {
      throw ConfigError("LPIPS weights for block " + std::to_string(b) + " have the wrong length");
    }
  }
}

Lpips Lpips::load(std::shared_ptr<const VggBackbone> vgg, const std::filesystem::path& path) {
  const nn::TensorArchive a = nn::read_safetensors(path);
  std::vector<std::vector<double>> w;
  for (int b = 0; b < vgg->num_blocks(); ++b) w.push_back(a.at("lin" + std::to_string(b) + ".model.1.weight").values);
  return Lpips(std::move(vgg), std::move(w));
}

nn::Tensor Lpips::distance(const nn::Tensor& a, const nn::Tensor& b) const {
  if (a.shape() != b.shape()) throw ShapeError("lpips: shape mismatch");
  std::vector<int> blocks(vgg_->num_blocks());
  std::iota(blocks.begin(), blocks.end(), 1);
  const auto fa = vgg_->forward(a, blocks, false, kLpipsNorm);
  const auto fb = vgg_->forward(b, blocks, false, kLpipsNorm);
  nn::Tensor total;
  for (std::size_t k = 0; k < fa.size(); ++k) {
    const nn::Shape s = fa[k].shape();
    nn::Tensor d = nn::square(nn::sub(nn::normalize_channels(fa[k]), nn::normalize_channels(fb[k])));
    // Channel weights, spatial mean per sample, then the batch mean.
    const std::vector<double> zero(s.c, 0.0);
    d = nn::affine_channel(d, weights_[k], zero);
    nn::Tensor term = nn::mul_scalar(nn::sum(d), 1.0 / (static_cast<double>(s.plane()) * s.n));
    total = total.defined() ? nn::add(total, term) : term;
  }
  return total;
}

double Lpips::distance(const ImageTensor& a, const ImageTensor& b) const {
  if (!a.same_shape(b)) throw ShapeError("lpips: shape mismatch");
  if (a == b) return 0.0;
  nn::NoGradGuard no_grad;
  return distance(nn::image_to_tensor(a.to_rgb()), nn::image_to_tensor(b.to_rgb())).item();
}

bool metric_higher_is_better(const std::string& metric_id) {
  return !(metric_id == "fid" || metric_id == "lpips");
}

double bd_br(const RdCurve& reference, const RdCurve& test) {
  const Prepared r = prepare(reference, "reference");
  const Prepared t = prepare(test, "test");
  const double lo = std::max(r.q.front(), t.q.front());
  const double hi = std::min(r.q.back(), t.q.back());
  if (!(hi > lo)) {
    throw Error("no quality overlap between '" + reference.label + "' and '" + test.label + "'");
  }
  const double diff = mean_log_rate(t, lo, hi) - mean_log_rate(r, lo, hi);
  return (std::exp(diff) - 1.0) * 100.0;
}

RdCurve build_rd_curve(std::span<const Manifest> manifests, const std::string& metric_id,
                       const SetMetric& metric, const std::string& label) {
  RdCurve curve;
  curve.label = label;
  curve.metric_id = metric_id;
  curve.higher_is_better = metric_higher_is_better(metric_id);
  for (const Manifest& m : manifests) {
    if (m.entries.empty()) throw Error("build_rd_curve: empty manifest");
    for (const auto& e : m.entries) {
      if (!e.enhanced_path) throw Error("missing enhanced image for source_id " + e.source_id);
    }
    curve.codec = m.entries.front().codec.id;
    const std::vector<ImageTriplet> triplets = load_triplets(m);
    double bpp = 0.0;
    for (const auto& t : triplets) bpp += t.bpp;
    curve.points.push_back({bpp / static_cast<double>(triplets.size()), metric(triplets)});
  }
  std::sort(curve.points.begin(), curve.points.end(),
            [](const RdPoint& a, const RdPoint& b) { return a.bpp < b.bpp; });
  return curve;
}

}  // namespace qe
