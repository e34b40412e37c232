#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "ambiseg/tensor.hpp"

namespace ambiseg {

/// Planar (channel-major) raster of reals. Masks are single-channel rasters;
/// binary masks hold exactly 0 or 1.
class Raster {
 public:
  Raster() = default;
  Raster(std::size_t channels, std::size_t height, std::size_t width, Real fill = 0.0)
      : channels_(channels), height_(height), width_(width), data_(channels * height * width, fill) {}

  static Raster mask(std::size_t height, std::size_t width, Real fill = 0.0) {
    return Raster(1, height, width, fill);
  }

  std::size_t channels() const { return channels_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t pixels() const { return height_ * width_; }
  std::size_t size() const { return data_.size(); }

  Real& at(std::size_t c, std::size_t y, std::size_t x) { return data_[(c * height_ + y) * width_ + x]; }
  Real at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * height_ + y) * width_ + x];
  }
  Real& operator()(std::size_t y, std::size_t x) { return data_[y * width_ + x]; }
  Real operator()(std::size_t y, std::size_t x) const { return data_[y * width_ + x]; }
  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  std::vector<Real>& storage() { return data_; }
  const std::vector<Real>& storage() const { return data_; }
  Real* plane(std::size_t c) { return data_.data() + c * pixels(); }
  const Real* plane(std::size_t c) const { return data_.data() + c * pixels(); }

  bool same_geometry(const Raster& o) const {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }
  Raster channel(std::size_t c) const;
  Real sum() const;
  Real mean() const { return data_.empty() ? 0.0 : sum() / static_cast<Real>(data_.size()); }

  friend bool operator==(const Raster& a, const Raster& b) {
    return a.same_geometry(b) && a.data_ == b.data_;
  }

 private:
  std::size_t channels_ = 0, height_ = 0, width_ = 0;
  std::vector<Real> data_;
};

using Mask = Raster;

Mask binarize(const Mask& m, Real threshold = 0.5);
Mask invert(const Mask& m);
std::size_t count_nonzero(const Mask& m);

Raster flip_horizontal(const Raster& r);
Raster flip_vertical(const Raster& r);
/// Bilinear with half-pixel centres, per channel.
Raster resize_bilinear(const Raster& r, std::size_t height, std::size_t width);
/// Separable Gaussian blur, edge-clamped; sigma <= 0 returns the input.
Raster gaussian_blur(const Raster& r, Real sigma);
/// Integer translation, vacated pixels filled with `fill`.
Raster shift(const Raster& r, int dy, int dx, Real fill = 0.0);
/// Mean over non-overlapping factor x factor blocks.
Raster average_pool(const Raster& r, std::size_t factor);

/// Stack rasters of equal size into a B x C x H x W tensor.
Tensor to_tensor(const std::vector<const Raster*>& batch);
/// Channel `c` of batch element `b` as a single-channel raster.
Raster plane_of(const Tensor& t, std::size_t b, std::size_t c);

}  // namespace ambiseg
