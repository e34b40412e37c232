#include "ambiseg/raster.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ambiseg {

Raster Raster::channel(std::size_t c) const {
  Raster out(1, height_, width_);
  std::copy_n(plane(c), pixels(), out.storage().begin());
  return out;
}

Real Raster::sum() const {
  Real acc = 0;
  for (Real v : data_) acc += v;
  return acc;
}

Mask binarize(const Mask& m, Real threshold) {
  Mask out = m;
  for (auto& v : out.storage()) v = v >= threshold ? 1.0 : 0.0;
  return out;
}

Mask invert(const Mask& m) {
  Mask out = m;
  for (auto& v : out.storage()) v = 1.0 - v;
  return out;
}

std::size_t count_nonzero(const Mask& m) {
  return static_cast<std::size_t>(
      std::count_if(m.storage().begin(), m.storage().end(), [](Real v) { return v != 0.0; }));
}

Raster flip_horizontal(const Raster& r) {
  Raster out(r.channels(), r.height(), r.width());
  for (std::size_t c = 0; c < r.channels(); ++c)
    for (std::size_t y = 0; y < r.height(); ++y)
      for (std::size_t x = 0; x < r.width(); ++x) out.at(c, y, r.width() - 1 - x) = r.at(c, y, x);
  return out;
}

Raster flip_vertical(const Raster& r) {
  Raster out(r.channels(), r.height(), r.width());
  for (std::size_t c = 0; c < r.channels(); ++c)
    for (std::size_t y = 0; y < r.height(); ++y)
      for (std::size_t x = 0; x < r.width(); ++x) out.at(c, r.height() - 1 - y, x) = r.at(c, y, x);
  return out;
}

namespace {

struct Tap {
  std::size_t lo, hi;
  Real frac;
};

std::vector<Tap> taps(std::size_t in, std::size_t out) {
  std::vector<Tap> t(out);
  const Real scale = static_cast<Real>(in) / static_cast<Real>(out);
  for (std::size_t i = 0; i < out; ++i) {
    Real src = std::max<Real>(0.0, (static_cast<Real>(i) + 0.5) * scale - 0.5);
    auto lo = std::min(static_cast<std::size_t>(std::floor(src)), in - 1);
    auto hi = std::min(lo + 1, in - 1);
    t[i] = {lo, hi, lo == hi ? 0.0 : src - static_cast<Real>(lo)};
  }
  return t;
}

}  // namespace

Raster resize_bilinear(const Raster& r, std::size_t height, std::size_t width) {
  if (height == r.height() && width == r.width()) return r;
  Raster out(r.channels(), height, width);
  const auto ty = taps(r.height(), height), tx = taps(r.width(), width);
  for (std::size_t c = 0; c < r.channels(); ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const Tap& a = ty[y];
        const Tap& b = tx[x];
        const Real top = r.at(c, a.lo, b.lo) * (1 - b.frac) + r.at(c, a.lo, b.hi) * b.frac;
        const Real bot = r.at(c, a.hi, b.lo) * (1 - b.frac) + r.at(c, a.hi, b.hi) * b.frac;
        out.at(c, y, x) = top * (1 - a.frac) + bot * a.frac;
      }
    }
  }
  return out;
}

Raster gaussian_blur(const Raster& r, Real sigma) {
  if (sigma <= 0) return r;
  const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<Real> k(2 * radius + 1);
  Real total = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += k[i + radius];
  }
  for (auto& v : k) v /= total;
  const int h = static_cast<int>(r.height()), w = static_cast<int>(r.width());
  Raster tmp(r.channels(), r.height(), r.width()), out(r.channels(), r.height(), r.width());
  for (std::size_t c = 0; c < r.channels(); ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        Real acc = 0;
        for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * r.at(c, y, std::clamp(x + i, 0, w - 1));
        tmp.at(c, y, x) = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        Real acc = 0;
        for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp.at(c, std::clamp(y + i, 0, h - 1), x);
        out.at(c, y, x) = acc;
      }
  }
  return out;
}

Raster shift(const Raster& r, int dy, int dx, Real fill) {
  Raster out(r.channels(), r.height(), r.width(), fill);
  const int h = static_cast<int>(r.height()), w = static_cast<int>(r.width());
  for (std::size_t c = 0; c < r.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int sy = y - dy, sx = x - dx;
        if (sy >= 0 && sy < h && sx >= 0 && sx < w) out.at(c, y, x) = r.at(c, sy, sx);
      }
  return out;
}

Raster average_pool(const Raster& r, std::size_t factor) {
  if (factor == 0 || r.height() % factor || r.width() % factor) {
    throw std::invalid_argument("average_pool: size not divisible by factor");
  }
  Raster out(r.channels(), r.height() / factor, r.width() / factor);
  const Real norm = 1.0 / static_cast<Real>(factor * factor);
  for (std::size_t c = 0; c < r.channels(); ++c)
    for (std::size_t y = 0; y < r.height(); ++y)
      for (std::size_t x = 0; x < r.width(); ++x) out.at(c, y / factor, x / factor) += r.at(c, y, x) * norm;
  return out;
}

Tensor to_tensor(const std::vector<const Raster*>& batch) {
  if (batch.empty()) throw std::invalid_argument("to_tensor: empty batch");
  const Raster& f = *batch.front();
  Tensor t(Shape{batch.size(), f.channels(), f.height(), f.width()});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (!batch[b]->same_geometry(f)) throw std::invalid_argument("to_tensor: mixed raster sizes");
    std::copy(batch[b]->storage().begin(), batch[b]->storage().end(), t.data() + b * f.size());
  }
  return t;
}

Raster plane_of(const Tensor& t, std::size_t b, std::size_t c) {
  const auto& s = t.shape();
  Raster out(1, s[2], s[3]);
  std::copy_n(t.data() + (b * s[1] + c) * s[2] * s[3], s[2] * s[3], out.storage().begin());
  return out;
}

}  // namespace ambiseg
