#pragma once

#include "ambiseg/tensor.hpp"

namespace ambiseg::diff::kernels {

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad);

/// Accumulates into whichever of gx, gw, gb is non-null (pre-shaped).
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gout, int stride, int pad,
                     Tensor* gx, Tensor* gw, Tensor* gb);

Tensor resize_forward(const Tensor& x, std::size_t height, std::size_t width);
void resize_backward(const Tensor& gout, Tensor& gx);

}  // namespace ambiseg::diff::kernels
