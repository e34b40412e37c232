#include "ambiseg/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace ambiseg {

Shape::Shape(std::initializer_list<std::size_t> dims) : dims_(dims) {
  if (dims_.size() > 4) throw std::invalid_argument("tensor rank > 4 is not supported");
}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  if (dims_.size() > 4) throw std::invalid_argument("tensor rank > 4 is not supported");
}

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (auto d : dims_) n *= d;
  return n;
}

std::string Shape::str() const {
  std::string s = "[";
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims_[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, Real fill) : shape_(std::move(shape)), data_(shape_.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<Real> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_.numel()) {
    throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                " does not match shape " + shape_.str());
  }
}

Real& Tensor::at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
  return data_[((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Real Tensor::at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
  return data_[((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Real Tensor::item() const {
  if (data_.size() != 1) {
    throw std::logic_error("item() on tensor of shape " + shape_.str());
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  for (Real v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(Real v) {
  for (auto& x : data_) x = v;
}

Tensor Tensor::reshaped(Shape s) const {
  if (s.numel() != data_.size()) {
    throw std::invalid_argument("cannot reshape " + shape_.str() + " to " + s.str());
  }
  return Tensor(std::move(s), data_);
}

}  // namespace ambiseg
