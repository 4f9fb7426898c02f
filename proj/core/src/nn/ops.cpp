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

#include "qe/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "qe/error.hpp"

namespace qe::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using NodePtr = std::shared_ptr<Tensor::Node>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() +
                     " vs " + b.shape().str());
  }
}

// Unary elementwise op: forward f(x), backward g * df(x, y).
template <typename F, typename DF>
Tensor unary(const Tensor& x, F f, DF df) {
  std::vector<double> y(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  NodePtr xn = x.node();
  return make_result(x.shape(), std::move(y), {x}, [xn, df](Tensor::Node& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * df(xn->value[i], self.value[i]);
    }
  });
}

struct ConvGeometry {
  int cin, h, w, kh, kw, ho, wo;
  ConvParams p;
  std::size_t rows() const { return static_cast<std::size_t>(cin) * kh * kw; }
  std::size_t cols() const { return static_cast<std::size_t>(ho) * wo; }
  bool is_pointwise() const {
    return kh == 1 && kw == 1 && p.stride_h == 1 && p.stride_w == 1 &&
           p.pad_h == 0 && p.pad_w == 0;
  }
};

void im2col(const double* x, const ConvGeometry& g, double* col) {
  const std::size_t cols = g.cols();
  for (int c = 0; c < g.cin; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        double* dst = col + ((static_cast<std::size_t>(c) * g.kh + ki) * g.kw + kj) * cols;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.p.stride_h - g.p.pad_h + ki;
          double* row = dst + static_cast<std::size_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(row, row + g.wo, 0.0);
            continue;
          }
          const double* src = x + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.p.stride_w - g.p.pad_w + kj;
            row[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* x) {
  const std::size_t cols = g.cols();
  for (int c = 0; c < g.cin; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const double* src =
            col + ((static_cast<std::size_t>(c) * g.kh + ki) * g.kw + kj) * cols;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.p.stride_h - g.p.pad_h + ki;
          if (iy < 0 || iy >= g.h) continue;
          const double* row = src + static_cast<std::size_t>(oy) * g.wo;
          double* dst = x + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.p.stride_w - g.p.pad_w + kj;
            if (ix >= 0 && ix < g.w) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              ConvParams p) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c) {
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) +
                     " channels, weight expects " + std::to_string(ws.c));
  }
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(ws.n)) {
    throw ShapeError("conv2d: bias size does not match output channels");
  }
  ConvGeometry g{xs.c, xs.h, xs.w, ws.h, ws.w, 0, 0, p};
  g.ho = (xs.h + 2 * p.pad_h - ws.h) / p.stride_h + 1;
  g.wo = (xs.w + 2 * p.pad_w - ws.w) / p.stride_w + 1;
  if (g.ho < 1 || g.wo < 1 || xs.h + 2 * p.pad_h < ws.h || xs.w + 2 * p.pad_w < ws.w) {
    throw ShapeError("conv2d: kernel larger than padded input " + xs.str());
  }
  const int cout = ws.n;
  const std::size_t K = g.rows();
  const std::size_t P = g.cols();
  const Shape ys{xs.n, cout, g.ho, g.wo};
  std::vector<double> y(ys.numel());
  std::vector<double> col(g.is_pointwise() ? 0 : K * P);

  ConstMapMat W(weight.values().data(), cout, K);
  for (int n = 0; n < xs.n; ++n) {
    const double* xn = x.values().data() + n * xs.c * xs.plane();
    const double* colp = xn;
    if (!g.is_pointwise()) {
      im2col(xn, g, col.data());
      colp = col.data();
    }
    MapMat Y(y.data() + n * cout * P, cout, P);
    Y.noalias() = W * ConstMapMat(colp, K, P);
    if (bias.defined()) {
      const auto b = bias.values();
      for (int co = 0; co < cout; ++co) Y.row(co).array() += b[co];
    }
  }

  NodePtr xn = x.node();
  NodePtr wn = weight.node();
  NodePtr bn = bias.defined() ? bias.node() : nullptr;
  return make_result(ys, std::move(y), {x, weight, bias},
                     [xn, wn, bn, g, cout, K, P](Tensor::Node& self) {
    const int batch = self.shape.n;
    const std::size_t in_stride = static_cast<std::size_t>(g.cin) * g.h * g.w;
    std::vector<double> col(g.is_pointwise() ? 0 : K * P);
    std::vector<double> dcol(K * P);
    ConstMapMat W(wn->value.data(), cout, K);
    for (int n = 0; n < batch; ++n) {
      ConstMapMat G(self.grad.data() + n * cout * P, cout, P);
      if (wn->requires_grad) {
        const double* colp = xn->value.data() + n * in_stride;
        if (!g.is_pointwise()) {
          im2col(colp, g, col.data());
          colp = col.data();
        }
        MapMat dW(wn->ensure_grad().data(), cout, K);
        dW.noalias() += G * ConstMapMat(colp, K, P).transpose();
      }
      if (bn && bn->requires_grad) {
        auto& db = bn->ensure_grad();
        // Plain loop: Eigen's vectorized sum peels by address, so rounding
        // would follow the allocator.
        const double* gp = self.grad.data() + n * cout * P;
        for (int co = 0; co < cout; ++co) {
          double acc = 0.0;
          for (std::size_t k = 0; k < P; ++k) acc += gp[co * P + k];
          db[co] += acc;
        }
      }
      if (xn->requires_grad) {
        double* dx = xn->ensure_grad().data() + n * in_stride;
        if (g.is_pointwise()) {
          MapMat(dx, K, P).noalias() += W.transpose() * G;
        } else {
          MapMat(dcol.data(), K, P).noalias() = W.transpose() * G;
          col2im_add(dcol.data(), g, dx);
        }
      }
    }
  });
}

Tensor max_pool2d(const Tensor& x, int kernel, int stride, int pad) {
  const Shape s = x.shape();
  const int ho = (s.h + 2 * pad - kernel) / stride + 1;
  const int wo = (s.w + 2 * pad - kernel) / stride + 1;
  if (ho < 1 || wo < 1) throw ShapeError("max_pool2d: input too small " + s.str());
  const Shape ys{s.n, s.c, ho, wo};
  std::vector<double> y(ys.numel());
  std::vector<std::size_t> argmax(ys.numel());
  const auto xv = x.values();
  std::size_t o = 0;
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    const std::size_t base = nc * s.plane();
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox, ++o) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_i = base;
        for (int ki = 0; ki < kernel; ++ki) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= s.h) continue;
          for (int kj = 0; kj < kernel; ++kj) {
            const int ix = ox * stride - pad + kj;
            if (ix < 0 || ix >= s.w) continue;
            const std::size_t i = base + static_cast<std::size_t>(iy) * s.w + ix;
            if (xv[i] > best) {
              best = xv[i];
              best_i = i;
            }
          }
        }
        y[o] = best;
        argmax[o] = best_i;
      }
    }
  }
  NodePtr xn = x.node();
  return make_result(ys, std::move(y), {x}, [xn, argmax](Tensor::Node& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += self.grad[i];
  });
}

Tensor avg_pool2d(const Tensor& x, int kernel, int stride, int pad,
                  bool count_include_pad) {
  const Shape s = x.shape();
  const int ho = (s.h + 2 * pad - kernel) / stride + 1;
  const int wo = (s.w + 2 * pad - kernel) / stride + 1;
  if (ho < 1 || wo < 1) throw ShapeError("avg_pool2d: input too small " + s.str());
  const Shape ys{s.n, s.c, ho, wo};
  // Divisor per output cell is shared by all planes.
  std::vector<double> inv_count(static_cast<std::size_t>(ho) * wo);
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      int count = 0;
      if (count_include_pad) {
        const int y0 = oy * stride - pad, x0 = ox * stride - pad;
        const int y1 = std::min(y0 + kernel, s.h + pad);
        const int x1 = std::min(x0 + kernel, s.w + pad);
        count = (y1 - y0) * (x1 - x0);
      } else {
        for (int ki = 0; ki < kernel; ++ki) {
          for (int kj = 0; kj < kernel; ++kj) {
            const int iy = oy * stride - pad + ki, ix = ox * stride - pad + kj;
            if (iy >= 0 && iy < s.h && ix >= 0 && ix < s.w) ++count;
          }
        }
      }
      inv_count[static_cast<std::size_t>(oy) * wo + ox] = 1.0 / count;
    }
  }
  auto visit = [s, kernel, stride, pad, ho, wo](auto&& fn) {
    for (int nc = 0; nc < s.n * s.c; ++nc) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          const std::size_t o = (static_cast<std::size_t>(nc) * ho + oy) * wo + ox;
          for (int ki = 0; ki < kernel; ++ki) {
            const int iy = oy * stride - pad + ki;
            if (iy < 0 || iy >= s.h) continue;
            for (int kj = 0; kj < kernel; ++kj) {
              const int ix = ox * stride - pad + kj;
              if (ix < 0 || ix >= s.w) continue;
              fn(o, nc * s.plane() + static_cast<std::size_t>(iy) * s.w + ix,
                 static_cast<std::size_t>(oy) * wo + ox);
            }
          }
        }
      }
    }
  };
  std::vector<double> y(ys.numel(), 0.0);
  const auto xv = x.values();
  visit([&](std::size_t o, std::size_t i, std::size_t cell) {
    y[o] += xv[i] * inv_count[cell];
  });
  NodePtr xn = x.node();
  return make_result(ys, std::move(y), {x}, [xn, visit, inv_count](Tensor::Node& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    visit([&](std::size_t o, std::size_t i, std::size_t cell) {
      g[i] += self.grad[o] * inv_count[cell];
    });
  });
}

Tensor global_avg_pool(const Tensor& x) {
  const Shape s = x.shape();
  const Shape ys{s.n, s.c, 1, 1};
  std::vector<double> y(ys.numel());
  const auto xv = x.values();
  const double inv = 1.0 / static_cast<double>(s.plane());
  for (std::size_t nc = 0; nc < y.size(); ++nc) {
    double acc = 0.0;
    for (std::size_t i = 0; i < s.plane(); ++i) acc += xv[nc * s.plane() + i];
    y[nc] = acc * inv;
  }
  NodePtr xn = x.node();
  return make_result(ys, std::move(y), {x}, [xn, inv](Tensor::Node& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    const std::size_t plane = xn->shape.plane();
    for (std::size_t nc = 0; nc < self.grad.size(); ++nc) {
      const double d = self.grad[nc] * inv;
      for (std::size_t i = 0; i < plane; ++i) g[nc * plane + i] += d;
    }
  });
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  const Shape s = x.shape();
  const Shape ys{s.n, s.c, s.h * factor, s.w * factor};
  std::vector<double> y(ys.numel());
  const auto xv = x.values();
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    for (int oy = 0; oy < ys.h; ++oy) {
      for (int ox = 0; ox < ys.w; ++ox) {
        y[nc * ys.plane() + static_cast<std::size_t>(oy) * ys.w + ox] =
            xv[nc * s.plane() + static_cast<std::size_t>(oy / factor) * s.w + ox / factor];
      }
    }
  }
  NodePtr xn = x.node();
  return make_result(ys, std::move(y), {x}, [xn, factor](Tensor::Node& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    const Shape s = xn->shape;
    const Shape ys = self.shape;
    for (int nc = 0; nc < s.n * s.c; ++nc) {
      for (int oy = 0; oy < ys.h; ++oy) {
        for (int ox = 0; ox < ys.w; ++ox) {
          g[nc * s.plane() + static_cast<std::size_t>(oy / factor) * s.w + ox / factor] +=
              self.grad[nc * ys.plane() + static_cast<std::size_t>(oy) * ys.w + ox];
        }
      }
    }
  });
}

Tensor reflect_pad(const Tensor& x, int bottom, int right) {
  const Shape s = x.shape();
  if (bottom < 0 || right < 0 || bottom >= s.h || right >= s.w) {
    throw ShapeError("reflect_pad: padding must be smaller than the input " + s.str());
  }
  if (bottom == 0 && right == 0) return x;
  const Shape ys{s.n, s.c, s.h + bottom, s.w + right};
  std::vector<std::size_t> src(ys.plane());
  for (int oy = 0; oy < ys.h; ++oy) {
    const int iy = oy < s.h ? oy : 2 * (s.h - 1) - oy;
    for (int ox = 0; ox < ys.w; ++ox) {
      const int ix = ox < s.w ? ox : 2 * (s.w - 1) - ox;
      src[static_cast<std::size_t>(oy) * ys.w + ox] = static_cast<std::size_t>(iy) * s.w + ix;
    }
  }
  std::vector<double> y(ys.numel());
  const auto xv = x.values();
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    for (std::size_t i = 0; i < ys.plane(); ++i) {
      y[nc * ys.plane() + i] = xv[nc * s.plane() + src[i]];
    }
  }
  NodePtr xn = x.node();
  return make_result(ys, std::move(y), {x}, [xn, src](Tensor::Node& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    const std::size_t in_plane = xn->shape.plane();
    const std::size_t out_plane = self.shape.plane();
    for (int nc = 0; nc < xn->shape.n * xn->shape.c; ++nc) {
      for (std::size_t i = 0; i < out_plane; ++i) {
        g[nc * in_plane + src[i]] += self.grad[nc * out_plane + i];
      }
    }
  });
}

Tensor crop(const Tensor& x, int height, int width) {
  const Shape s = x.shape();
  if (height > s.h || width > s.w || height < 1 || width < 1) {
    throw ShapeError("crop: window larger than input " + s.str());
  }
  if (height == s.h && width == s.w) return x;
  const Shape ys{s.n, s.c, height, width};
  std::vector<double> y(ys.numel());
  const auto xv = x.values();
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    for (int r = 0; r < height; ++r) {
      std::copy_n(xv.data() + nc * s.plane() + static_cast<std::size_t>(r) * s.w, width,
                  y.data() + nc * ys.plane() + static_cast<std::size_t>(r) * width);
    }
  }
  NodePtr xn = x.node();
  return make_result(ys, std::move(y), {x}, [xn](Tensor::Node& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    const Shape s = xn->shape;
    const Shape ys = self.shape;
    for (int nc = 0; nc < s.n * s.c; ++nc) {
      for (int r = 0; r < ys.h; ++r) {
        const double* src = self.grad.data() + nc * ys.plane() + static_cast<std::size_t>(r) * ys.w;
        double* dst = g.data() + nc * s.plane() + static_cast<std::size_t>(r) * s.w;
        for (int c = 0; c < ys.w; ++c) dst[c] += src[c];
      }
    }
  });
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  Shape ys = parts[0].shape();
  ys.c = 0;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s.n != ys.n || s.h != ys.h || s.w != ys.w) {
      throw ShapeError("concat_channels: incompatible shapes " +
                       parts[0].shape().str() + " vs " + s.str());
    }
    ys.c += s.c;
  }
  std::vector<double> y(ys.numel());
  const std::size_t plane = ys.plane();
  std::vector<int> offsets;
  int off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const int c = p.shape().c;
    for (int n = 0; n < ys.n; ++n) {
      std::copy_n(p.values().data() + static_cast<std::size_t>(n) * c * plane, c * plane,
                  y.data() + (static_cast<std::size_t>(n) * ys.c + off) * plane);
    }
    off += c;
  }
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result(ys, std::move(y), std::move(inputs),
                     [nodes, offsets](Tensor::Node& self) {
    const std::size_t plane = self.shape.plane();
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      auto& in = *nodes[k];
      if (!in.requires_grad) continue;
      auto& g = in.ensure_grad();
      const int c = in.shape.c;
      for (int n = 0; n < self.shape.n; ++n) {
        const double* src =
            self.grad.data() + (static_cast<std::size_t>(n) * self.shape.c + offsets[k]) * plane;
        double* dst = g.data() + static_cast<std::size_t>(n) * c * plane;
        for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
      }
    }
  });
}

namespace {

template <typename F, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db) {
  require_same_shape(a, b, name);
  std::vector<double> y(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(av[i], bv[i]);
  NodePtr an = a.node();
  NodePtr bn = b.node();
  return make_result(a.shape(), std::move(y), {a, b}, [an, bn, da, db](Tensor::Node& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += self.grad[i] * da(an->value[i], bn->value[i]);
      }
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += self.grad[i] * db(an->value[i], bn->value[i]);
      }
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor sub_broadcast(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) throw ShapeError("sub_broadcast: subtrahend must be a scalar");
  const double sv = s.values()[0];
  std::vector<double> y(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] - sv;
  NodePtr xn = x.node();
  NodePtr sn = s.node();
  return make_result(x.shape(), std::move(y), {x, s}, [xn, sn](Tensor::Node& self) {
    if (xn->requires_grad) {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (sn->requires_grad) {
      double acc = 0.0;
      for (double v : self.grad) acc += v;
      sn->ensure_grad()[0] -= acc;
    }
  });
}

Tensor affine_channel(const Tensor& x, std::span<const double> scale,
                      std::span<const double> shift) {
  const Shape s = x.shape();
  if (scale.size() != static_cast<std::size_t>(s.c) || shift.size() != scale.size()) {
    throw ShapeError("affine_channel: coefficient count does not match channels");
  }
  std::vector<double> sc(scale.begin(), scale.end());
  std::vector<double> y(x.numel());
  const auto xv = x.values();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) {
        y[base + i] = xv[base + i] * scale[c] + shift[c];
      }
    }
  }
  NodePtr xn = x.node();
  return make_result(s, std::move(y), {x}, [xn, sc](Tensor::Node& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    const Shape s = xn->shape;
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * s.plane();
        for (std::size_t i = 0; i < s.plane(); ++i) g[base + i] += self.grad[base + i] * sc[c];
      }
    }
  });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v < lo || v > hi) ? 0.0 : 1.0; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  NodePtr xn = x.node();
  return make_result(Shape{}, {acc}, {x}, [xn](Tensor::Node& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  NodePtr xn = x.node();
  return make_result(Shape{}, {acc * inv}, {x}, [xn, inv](Tensor::Node& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    const double d = self.grad[0] * inv;
    for (auto& v : g) v += d;
  });
}

Tensor normalize_channels(const Tensor& x, double eps) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  std::vector<double> norms(static_cast<std::size_t>(s.n) * plane, 0.0);
  const auto xv = x.values();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) norms[n * plane + i] += xv[base + i] * xv[base + i];
    }
  }
  for (auto& v : norms) v = std::sqrt(v);
  std::vector<double> y(x.numel());
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        y[base + i] = xv[base + i] / (norms[n * plane + i] + eps);
      }
    }
  }
  NodePtr xn = x.node();
  return make_result(s, std::move(y), {x}, [xn, norms, eps](Tensor::Node& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    const Shape s = xn->shape;
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n) {
      for (std::size_t i = 0; i < plane; ++i) {
        const double norm = norms[n * plane + i];
        const double d = norm + eps;
        double dot = 0.0;
        for (int c = 0; c < s.c; ++c) {
          const std::size_t k = (static_cast<std::size_t>(n) * s.c + c) * plane + i;
          dot += self.grad[k] * xn->value[k];
        }
        const double coef = norm > 0.0 ? dot / (norm * d * d) : 0.0;
        for (int c = 0; c < s.c; ++c) {
          const std::size_t k = (static_cast<std::size_t>(n) * s.c + c) * plane + i;
          g[k] += self.grad[k] / d - xn->value[k] * coef;
        }
      }
    }
  });
}

Tensor spectral_normalize(const Tensor& weight, std::vector<double>& u, bool update_u) {
  const Shape ws = weight.shape();
  const int rows = ws.n;
  const std::size_t cols = weight.numel() / rows;
  if (u.size() != static_cast<std::size_t>(rows)) {
    throw ShapeError("spectral_normalize: estimate vector has wrong length");
  }
  constexpr double kEps = 1e-12;
  // Scalar loops keep the estimate independent of buffer alignment.
  const double* W = weight.values().data();
  auto normalize = [&](std::vector<double>& a) {
    double n2 = 0.0;
    for (double x : a) n2 += x * x;
    const double d = std::max(std::sqrt(n2), kEps);
    for (double& x : a) x /= d;
  };
  auto mat_vec = [&](const std::vector<double>& a) {
    std::vector<double> out(rows, 0.0);
    for (int r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < cols; ++c) acc += W[r * cols + c] * a[c];
      out[r] = acc;
    }
    return out;
  };
  std::vector<double> v(cols, 0.0);
  for (int r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) v[c] += W[r * cols + c] * u[r];
  }
  normalize(v);
  std::vector<double> un = mat_vec(v);
  normalize(un);
  if (update_u) {
    u = un;
  } else {
    un = u;
  }
  const std::vector<double> wv_prod = mat_vec(v);
  double sigma = 0.0;
  for (int r = 0; r < rows; ++r) sigma += un[r] * wv_prod[r];
  std::vector<double> y(weight.numel());
  const auto wv = weight.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = wv[i] / sigma;
  NodePtr wn = weight.node();
  return make_result(ws, std::move(y), {weight},
                     [wn, un, v, sigma, rows, cols](Tensor::Node& self) {
    if (!wn->requires_grad) return;
    const double* G = self.grad.data();
    const double* Wsn = self.value.data();
    double inner = 0.0;
    for (std::size_t i = 0; i < self.grad.size(); ++i) inner += G[i] * Wsn[i];
    auto& dW = wn->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        dW[i] += (G[i] - inner * un[r] * v[c]) / sigma;
      }
    }
  });
}

Tensor resize_bilinear(const Tensor& x, int height, int width) {
  if (grad_enabled() && x.requires_grad()) {
    throw Error("resize_bilinear does not support gradients");
  }
  const Shape s = x.shape();
  if (s.h == height && s.w == width) return x.detach();
  const Shape ys{s.n, s.c, height, width};
  struct Tap {
    int i0, i1;
    double w1;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      double src = (o + 0.5) * scale - 0.5;
      if (src < 0.0) src = 0.0;
      const int i0 = std::min(static_cast<int>(src), in - 1);
      const int i1 = std::min(i0 + 1, in - 1);
      t[o] = {i0, i1, src - i0};
    }
    return t;
  };
  const auto ty = taps(s.h, height);
  const auto tx = taps(s.w, width);
  std::vector<double> y(ys.numel());
  const auto xv = x.values();
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    const double* src = xv.data() + nc * s.plane();
    double* dst = y.data() + nc * ys.plane();
    for (int oy = 0; oy < height; ++oy) {
      const Tap a = ty[oy];
      for (int ox = 0; ox < width; ++ox) {
        const Tap b = tx[ox];
        const double top = src[a.i0 * s.w + b.i0] * (1 - b.w1) + src[a.i0 * s.w + b.i1] * b.w1;
        const double bot = src[a.i1 * s.w + b.i0] * (1 - b.w1) + src[a.i1 * s.w + b.i1] * b.w1;
        dst[oy * width + ox] = top * (1 - a.w1) + bot * a.w1;
      }
    }
  }
  return Tensor(ys, std::move(y));
}

}  // namespace qe::nn
