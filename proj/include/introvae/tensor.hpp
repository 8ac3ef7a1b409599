#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "introvae/errors.hpp"

namespace introvae {

// Dense 4-D array. Image batches use (batch, channels, height, width);
// network activations use (channels, batch, height, width) so that a whole
// batch is one contiguous GEMM operand per channel.
template <class T>
class Tensor {
 public:
  using Shape = std::array<int, 4>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(count(shape), fill) {}

  const Shape& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(int a, int b, int c, int d) { return data_[offset(a, b, c, d)]; }
  const T& operator()(int a, int b, int c, int d) const { return data_[offset(a, b, c, d)]; }

  std::size_t plane() const { return std::size_t(shape_[2]) * shape_[3]; }

  // Contiguous view of the i-th slice along the leading axis.
  std::span<T> slice(int i) {
    const auto n = std::size_t(shape_[1]) * plane();
    return {data_.data() + n * std::size_t(i), n};
  }
  std::span<const T> slice(int i) const {
    const auto n = std::size_t(shape_[1]) * plane();
    return {data_.data() + n * std::size_t(i), n};
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  static std::size_t count(const Shape& s) {
    return std::size_t(s[0]) * std::size_t(s[1]) * std::size_t(s[2]) * std::size_t(s[3]);
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  std::size_t offset(int a, int b, int c, int d) const {
    return ((std::size_t(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d;
  }

  Shape shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

inline std::string shape_str(const std::array<int, 4>& s) {
  return std::to_string(s[0]) + "x" + std::to_string(s[1]) + "x" + std::to_string(s[2]) + "x" + std::to_string(s[3]);
}

template <class T>
void require_shape(const Tensor<T>& t, const std::array<int, 4>& s, const char* what) {
  if (t.shape() != s) throw ShapeError(std::string(what) + ": expected " + shape_str(s) + ", got " + shape_str(t.shape()));
}

// (N, C, H, W) <-> (C, N, H, W)
template <class T>
Tensor<T> swap_leading_axes(const Tensor<T>& x) {
  const int a = x.dim(0), b = x.dim(1);
  Tensor<T> y({b, a, x.dim(2), x.dim(3)});
  const auto p = x.plane();
  for (int i = 0; i < a; ++i)
    for (int j = 0; j < b; ++j)
      std::copy_n(x.data() + (std::size_t(i) * b + j) * p, p, y.data() + (std::size_t(j) * a + i) * p);
  return y;
}

// Concatenates tensors along the leading axis.
template <class T>
Tensor<T> concat_leading(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeError("concat_leading: trailing dimensions differ");
  Tensor<T> out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2), a.dim(3)});
  std::copy(a.vec().begin(), a.vec().end(), out.data());
  std::copy(b.vec().begin(), b.vec().end(), out.data() + a.size());
  return out;
}

// Rows [begin, end) along the leading axis.
template <class T>
Tensor<T> take_leading(const Tensor<T>& x, int begin, int end) {
  Tensor<T> out({end - begin, x.dim(1), x.dim(2), x.dim(3)});
  const auto n = std::size_t(x.dim(1)) * x.plane();
  std::copy_n(x.data() + n * begin, n * (end - begin), out.data());
  return out;
}

}  // namespace introvae
