#include "kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

namespace ambiseg::diff::kernels {

namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct ConvGeom {
  std::size_t batch, cin, h, w, cout, k, ho, wo;
  int stride, pad;
  std::size_t rows() const { return cin * k * k; }
  std::size_t cols() const { return ho * wo; }
  bool direct() const { return k == 1 && stride == 1 && pad == 0; }
};

ConvGeom geometry(const Tensor& x, const Tensor& w, int stride, int pad) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], 0, 0, stride, pad};
  g.ho = (static_cast<int>(g.h) + 2 * pad - static_cast<int>(g.k)) / stride + 1;
  g.wo = (static_cast<int>(g.w) + 2 * pad - static_cast<int>(g.k)) / stride + 1;
  return g;
}

// Output columns [x0, x1) whose input column for kernel offset kx is in range.
std::pair<int, int> valid_columns(const ConvGeom& g, int kx) {
  const int w = static_cast<int>(g.w), wo = static_cast<int>(g.wo);
  int x0 = 0, x1 = wo;
  while (x0 < wo && x0 * g.stride - g.pad + kx < 0) ++x0;
  while (x1 > x0 && (x1 - 1) * g.stride - g.pad + kx >= w) --x1;
  return {x0, x1};
}

// Unfolds one batch element into a (cin*k*k) x (ho*wo) matrix.
void im2col(const Real* img, const ConvGeom& g, Real* cols) {
  const int k = static_cast<int>(g.k);
  const int h = static_cast<int>(g.h), w = static_cast<int>(g.w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    const Real* plane = img + c * g.h * g.w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        Real* out = cols + row * g.cols();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const int iy = static_cast<int>(oy) * g.stride - g.pad + ky;
          if (iy < 0 || iy >= h) {
            std::fill(out + oy * g.wo, out + (oy + 1) * g.wo, 0.0);
            continue;
          }
          Real* dst = out + oy * g.wo;
          const Real* src = plane + iy * w;
          const auto [x0, x1] = valid_columns(g, kx);
          std::fill(dst, dst + x0, 0.0);
          if (g.stride == 1) {
            std::copy(src + (x0 - g.pad + kx), src + (x1 - g.pad + kx), dst + x0);
          } else {
            for (int ox = x0; ox < x1; ++ox) dst[ox] = src[ox * g.stride - g.pad + kx];
          }
          std::fill(dst + x1, dst + g.wo, 0.0);
        }
      }
    }
  }
}

void col2im_add(const Real* cols, const ConvGeom& g, Real* img) {
  const int k = static_cast<int>(g.k);
  const int h = static_cast<int>(g.h), w = static_cast<int>(g.w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    Real* plane = img + c * g.h * g.w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        const Real* in = cols + row * g.cols();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const int iy = static_cast<int>(oy) * g.stride - g.pad + ky;
          if (iy < 0 || iy >= h) continue;
          const Real* src = in + oy * g.wo;
          Real* dst = plane + iy * w;
          const auto [x0, x1] = valid_columns(g, kx);
          for (int ox = x0; ox < x1; ++ox) dst[ox * g.stride - g.pad + kx] += src[ox];
        }
      }
    }
  }
}

struct Axis {
  std::vector<std::size_t> lo, hi;
  std::vector<Real> frac;
};

// Half-pixel-centre sampling positions; source coordinates below zero clamp
// to the first sample.
Axis resize_axis(std::size_t in, std::size_t out) {
  Axis a;
  a.lo.resize(out);
  a.hi.resize(out);
  a.frac.resize(out);
  const Real scale = static_cast<Real>(in) / static_cast<Real>(out);
  for (std::size_t i = 0; i < out; ++i) {
    Real src = (static_cast<Real>(i) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    a.lo[i] = i0;
    a.hi[i] = std::min(i0 + 1, in - 1);
    a.frac[i] = src - static_cast<Real>(i0);
    if (a.lo[i] == a.hi[i]) a.frac[i] = 0;
  }
  return a;
}

}  // namespace

// Operands are copied into Eigen-owned (aligned) matrices: the vectorized
// product sums in an order that depends on operand alignment, and std::vector
// buffers give no alignment guarantee beyond 16 bytes.
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad) {
  const ConvGeom g = geometry(x, w, stride, pad);
  const auto rows = static_cast<Eigen::Index>(g.rows());
  const auto ncols = static_cast<Eigen::Index>(g.cols());
  const auto cout = static_cast<Eigen::Index>(g.cout);
  Tensor out(Shape{g.batch, g.cout, g.ho, g.wo});
  const RowMat wm = ConstMapMat(w.data(), cout, rows);
  RowMat cm(rows, ncols), om(cout, ncols);
  for (std::size_t b = 0; b < g.batch; ++b) {
    const Real* img = x.data() + b * g.cin * g.h * g.w;
    if (g.direct()) {
      cm = ConstMapMat(img, rows, ncols);
    } else {
      im2col(img, g, cm.data());
    }
    om.noalias() = wm * cm;
    if (bias) {
      for (std::size_t c = 0; c < g.cout; ++c) om.row(static_cast<Eigen::Index>(c)).array() += (*bias)[c];
    }
    MapMat(out.data() + b * g.cout * g.cols(), cout, ncols) = om;
  }
  return out;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gout, int stride, int pad,
                     Tensor* gx, Tensor* gw, Tensor* gb) {
  const ConvGeom g = geometry(x, w, stride, pad);
  const auto rows = static_cast<Eigen::Index>(g.rows());
  const auto ncols = static_cast<Eigen::Index>(g.cols());
  const auto cout = static_cast<Eigen::Index>(g.cout);
  const RowMat wt = ConstMapMat(w.data(), cout, rows).transpose();
  RowMat gm(cout, ncols), cm(rows, ncols), dc(rows, ncols);
  RowMat gwacc;
  if (gw) gwacc = RowMat::Zero(cout, rows);
  for (std::size_t b = 0; b < g.batch; ++b) {
    gm = ConstMapMat(gout.data() + b * g.cout * g.cols(), cout, ncols);
    if (gb) {
      for (std::size_t c = 0; c < g.cout; ++c) (*gb)[c] += gm.row(static_cast<Eigen::Index>(c)).sum();
    }
    const Real* img = x.data() + b * g.cin * g.h * g.w;
    if (gw) {
      if (g.direct()) {
        cm = ConstMapMat(img, rows, ncols);
      } else {
        im2col(img, g, cm.data());
      }
      gwacc.noalias() += gm * cm.transpose();
    }
    if (gx) {
      Real* gimg = gx->data() + b * g.cin * g.h * g.w;
      dc.noalias() = wt * gm;
      if (g.direct()) {
        MapMat(gimg, rows, ncols) += dc;
      } else {
        col2im_add(dc.data(), g, gimg);
      }
    }
  }
  if (gw) MapMat(gw->data(), cout, rows) += gwacc;
}

Tensor resize_forward(const Tensor& x, std::size_t height, std::size_t width) {
  const auto& s = x.shape();
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  Tensor out(Shape{s[0], s[1], height, width});
  const Axis ay = resize_axis(h, height), ax = resize_axis(w, width);
  for (std::size_t p = 0; p < planes; ++p) {
    const Real* src = x.data() + p * h * w;
    Real* dst = out.data() + p * height * width;
    for (std::size_t i = 0; i < height; ++i) {
      const Real fy = ay.frac[i];
      const Real* r0 = src + ay.lo[i] * w;
      const Real* r1 = src + ay.hi[i] * w;
      for (std::size_t j = 0; j < width; ++j) {
        const Real fx = ax.frac[j];
        const Real top = r0[ax.lo[j]] * (1 - fx) + r0[ax.hi[j]] * fx;
        const Real bot = r1[ax.lo[j]] * (1 - fx) + r1[ax.hi[j]] * fx;
        dst[i * width + j] = top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

void resize_backward(const Tensor& gout, Tensor& gx) {
  const auto& s = gx.shape();
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  const std::size_t height = gout.shape()[2], width = gout.shape()[3];
  const Axis ay = resize_axis(h, height), ax = resize_axis(w, width);
  for (std::size_t p = 0; p < planes; ++p) {
    const Real* g = gout.data() + p * height * width;
    Real* dst = gx.data() + p * h * w;
    for (std::size_t i = 0; i < height; ++i) {
      const Real fy = ay.frac[i];
      Real* r0 = dst + ay.lo[i] * w;
      Real* r1 = dst + ay.hi[i] * w;
      for (std::size_t j = 0; j < width; ++j) {
        const Real fx = ax.frac[j];
        const Real v = g[i * width + j];
        r0[ax.lo[j]] += v * (1 - fy) * (1 - fx);
        r0[ax.hi[j]] += v * (1 - fy) * fx;
        r1[ax.lo[j]] += v * fy * (1 - fx);
        r1[ax.hi[j]] += v * fy * fx;
      }
    }
  }
}

}  // namespace ambiseg::diff::kernels
