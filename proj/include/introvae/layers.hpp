#pragma once

// Forward and backward kernels for the layer types used by the encoder and
// generator. All feature maps are (channels, batch, height, width); a conv
// layer is one GEMM of the (cout x cin*k*k) weight against an im2col matrix
// spanning the whole batch. Convolutions are stride 1 with "same" padding.

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "introvae/tensor.hpp"

namespace introvae::layers {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapRow = Eigen::Map<RowMat<T>>;
template <class T>
using CMapRow = Eigen::Map<const RowMat<T>>;
template <class T>
using CMapVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using MapVec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

// Column matrix for images [b0, b0 + nb) of x: (c * k * k) rows and
// (nb * h * w) columns.
template <class T, class A>
void im2col(const Tensor<T>& x, int k, int b0, int nb, std::vector<T, A>& col) {
  const int c = x.dim(0), b = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int pad = k / 2;
  const std::size_t n = std::size_t(nb) * h * w;
  col.assign(std::size_t(c) * k * k * n, T(0));
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = col.data() + (std::size_t(ci * k + ky) * k + kx) * n;
        const int x_lo = std::max(0, pad - kx), x_hi = std::min(w, w + pad - kx);
        const int off = kx - pad;
        for (int bi = 0; bi < nb; ++bi) {
          const T* src = x.data() + (std::size_t(ci) * b + b0 + bi) * h * w;
          T* dst = row + std::size_t(bi) * h * w;
          for (int y = 0; y < h; ++y) {
            const int sy = y + ky - pad;
            if (sy < 0 || sy >= h) continue;
            const T* s = src + std::size_t(sy) * w;
            T* d = dst + std::size_t(y) * w;
            for (int xx = x_lo; xx < x_hi; ++xx) d[xx] = s[xx + off];
          }
        }
      }
}

template <class T, class A>
void im2col(const Tensor<T>& x, int k, std::vector<T, A>& col) {
  im2col(x, k, 0, x.dim(1), col);
}

// Scatter-adds a column matrix for images [b0, b0 + nb) back onto dx.
template <class T, class A>
void col2im_add(const std::vector<T, A>& col, int k, int b0, int nb, Tensor<T>& dx) {
  const int c = dx.dim(0), b = dx.dim(1), h = dx.dim(2), w = dx.dim(3);
  const int pad = k / 2;
  const std::size_t n = std::size_t(nb) * h * w;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col.data() + (std::size_t(ci * k + ky) * k + kx) * n;
        const int x_lo = std::max(0, pad - kx), x_hi = std::min(w, w + pad - kx);
        const int off = kx - pad;
        for (int bi = 0; bi < nb; ++bi) {
          T* dst = dx.data() + (std::size_t(ci) * b + b0 + bi) * h * w;
          const T* src = row + std::size_t(bi) * h * w;
          for (int y = 0; y < h; ++y) {
            const int sy = y + ky - pad;
            if (sy < 0 || sy >= h) continue;
            T* d = dst + std::size_t(sy) * w;
            const T* s = src + std::size_t(y) * w;
            for (int xx = x_lo; xx < x_hi; ++xx) d[xx + off] += s[xx];
          }
        }
      }
}

namespace detail {

// Eigen's vectorized loops peel a scalar head whose length depends on the
// buffer address, which changes rounding. Every Eigen input is read from
// aligned storage so results depend on values alone.
template <class T>
CMapRow<T> aligned_rows(const T* p, Eigen::Index rows, Eigen::Index cols, RowMat<T>& scratch) {
  if (reinterpret_cast<std::uintptr_t>(p) % EIGEN_DEFAULT_ALIGN_BYTES == 0) return CMapRow<T>(p, rows, cols);
  scratch = CMapRow<T>(p, rows, cols);
  return CMapRow<T>(scratch.data(), rows, cols);
}

// Images per im2col chunk, sized so one column block stays cache resident.
inline int chunk_images(int plane, int batch) {
  return std::clamp(2048 / std::max(plane, 1), 1, std::max(batch, 1));
}

}  // namespace detail

// weight: cout x (cin * k * k), bias: cout.
template <class T>
Tensor<T> conv_forward(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias, int cout, int k) {
  const int cin = x.dim(0), b = x.dim(1);
  const auto plane = static_cast<Eigen::Index>(x.plane());
  const auto n = static_cast<Eigen::Index>(b) * plane;
  const int kk = cin * k * k;
  Tensor<T> y({cout, b, x.dim(2), x.dim(3)});
  RowMat<T> w_buf, x_buf;
  const auto wm = detail::aligned_rows(weight.data(), cout, kk, w_buf);
  MapRow<T> ym(y.data(), cout, n);
  if (k == 1) {
    ym.noalias() = wm * detail::aligned_rows(x.data(), cin, n, x_buf);
  } else {
    const int step = detail::chunk_images(static_cast<int>(plane), b);
    AlignedVector<T> col;
    for (int b0 = 0; b0 < b; b0 += step) {
      const int nb = std::min(step, b - b0);
      im2col(x, k, b0, nb, col);
      ym.middleCols(b0 * plane, nb * plane).noalias() = wm * CMapRow<T>(col.data(), kk, nb * plane);
    }
  }
  ym.colwise() += CMapVec<T>(bias.data(), cout);
  return y;
}

// Accumulates weight/bias gradients when d_weight is non-empty, and returns
// the input gradient when want_dx is set (an empty tensor otherwise).
template <class T>
Tensor<T> conv_backward(const Tensor<T>& x, const Tensor<T>& dy, std::span<const T> weight, int k,
                        std::span<T> d_weight, std::span<T> d_bias, bool want_dx) {
  const int cin = x.dim(0), cout = dy.dim(0), b = x.dim(1);
  const auto plane = static_cast<Eigen::Index>(x.plane());
  const auto n = static_cast<Eigen::Index>(b) * plane;
  const int kk = cin * k * k;
  const bool want_dw = !d_weight.empty();
  RowMat<T> dy_buf, w_buf, x_buf;
  const auto dym = detail::aligned_rows(dy.data(), cout, n, dy_buf);
  const auto wm = detail::aligned_rows(weight.data(), cout, kk, w_buf);
  Tensor<T> dx;
  if (want_dx) dx = Tensor<T>(x.shape());
  if (want_dw) MapVec<T>(d_bias.data(), cout) += dym.rowwise().sum();
  if (k == 1) {
    if (want_dw)
      MapRow<T>(d_weight.data(), cout, kk).noalias() += dym * detail::aligned_rows(x.data(), cin, n, x_buf).transpose();
    if (want_dx) MapRow<T>(dx.data(), cin, n).noalias() = wm.transpose() * dym;
    return dx;
  }
  const int step = detail::chunk_images(static_cast<int>(plane), b);
  AlignedVector<T> col, dcol;
  for (int b0 = 0; b0 < b; b0 += step) {
    const int nb = std::min(step, b - b0);
    const auto cols = nb * plane;
    const auto dy_blk = dym.middleCols(b0 * plane, cols);
    if (want_dw) {
      im2col(x, k, b0, nb, col);
      MapRow<T>(d_weight.data(), cout, kk).noalias() += dy_blk * CMapRow<T>(col.data(), kk, cols).transpose();
    }
    if (want_dx) {
      dcol.resize(std::size_t(kk) * std::size_t(cols));
      MapRow<T>(dcol.data(), kk, cols).noalias() = wm.transpose() * dy_blk;
      col2im_add(dcol, k, b0, nb, dx);
    }
  }
  return dx;
}

template <class T>
void leaky_relu_inplace(Tensor<T>& x, T slope) {
  for (auto& v : x.vec()) v = v > T(0) ? v : slope * v;
}

template <class T>
void leaky_relu_inplace(std::span<T> x, T slope) {
  for (auto& v : x) v = v > T(0) ? v : slope * v;
}

// Backward through a leaky rectifier given its *output*; valid for slope > 0
// and for slope == 0 (plain rectifier), since sign(out) tracks sign(in).
template <class T>
void leaky_relu_backward_inplace(std::span<const T> out, std::span<T> grad, T slope) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(out[i] > T(0))) grad[i] *= slope;
}

template <class T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  const int c = x.dim(0), b = x.dim(1), h = x.dim(2) / 2, w = x.dim(3) / 2;
  Tensor<T> y({c, b, h, w});
  for (int p = 0; p < c * b; ++p) {
    const T* s = x.data() + std::size_t(p) * 4 * h * w;
    T* d = y.data() + std::size_t(p) * h * w;
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx) {
        const T* r0 = s + std::size_t(2 * yy) * (2 * w) + 2 * xx;
        const T* r1 = r0 + 2 * w;
        d[std::size_t(yy) * w + xx] = T(0.25) * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
  }
  return y;
}

template <class T>
Tensor<T> avg_pool2_backward(const Tensor<T>& dy) {
  const int c = dy.dim(0), b = dy.dim(1), h = dy.dim(2), w = dy.dim(3);
  Tensor<T> dx({c, b, 2 * h, 2 * w});
  for (int p = 0; p < c * b; ++p) {
    const T* s = dy.data() + std::size_t(p) * h * w;
    T* d = dx.data() + std::size_t(p) * 4 * h * w;
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx) {
        const T g = T(0.25) * s[std::size_t(yy) * w + xx];
        T* r0 = d + std::size_t(2 * yy) * (2 * w) + 2 * xx;
        T* r1 = r0 + 2 * w;
        r0[0] = r0[1] = r1[0] = r1[1] = g;
      }
  }
  return dx;
}

// Nearest-neighbour 2x upsampling.
template <class T>
Tensor<T> upsample2(const Tensor<T>& x) {
  const int c = x.dim(0), b = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y({c, b, 2 * h, 2 * w});
  for (int p = 0; p < c * b; ++p) {
    const T* s = x.data() + std::size_t(p) * h * w;
    T* d = y.data() + std::size_t(p) * 4 * h * w;
    for (int yy = 0; yy < 2 * h; ++yy)
      for (int xx = 0; xx < 2 * w; ++xx) d[std::size_t(yy) * 2 * w + xx] = s[std::size_t(yy / 2) * w + xx / 2];
  }
  return y;
}

template <class T>
Tensor<T> upsample2_backward(const Tensor<T>& dy) {
  const int c = dy.dim(0), b = dy.dim(1), h = dy.dim(2) / 2, w = dy.dim(3) / 2;
  Tensor<T> dx({c, b, h, w});
  for (int p = 0; p < c * b; ++p) {
    const T* s = dy.data() + std::size_t(p) * 4 * h * w;
    T* d = dx.data() + std::size_t(p) * h * w;
    for (int yy = 0; yy < 2 * h; ++yy)
      for (int xx = 0; xx < 2 * w; ++xx) d[std::size_t(yy / 2) * w + xx / 2] += s[std::size_t(yy) * 2 * w + xx];
  }
  return dx;
}

// y (rows x out) = x (rows x in) * W^T + b, W is (out x in).
template <class T>
std::vector<T> linear_forward(std::span<const T> x, int rows, int in, std::span<const T> weight,
                              std::span<const T> bias, int out) {
  std::vector<T> y(std::size_t(rows) * out);
  MapRow<T> ym(y.data(), rows, out);
  RowMat<T> x_buf, w_buf;
  ym.noalias() = detail::aligned_rows(x.data(), rows, in, x_buf) *
                 detail::aligned_rows(weight.data(), out, in, w_buf).transpose();
  ym.rowwise() += CMapVec<T>(bias.data(), out).transpose();
  return y;
}

template <class T>
std::vector<T> linear_backward(std::span<const T> x, int rows, int in, std::span<const T> dy, int out,
                               std::span<const T> weight, std::span<T> d_weight, std::span<T> d_bias, bool want_dx) {
  RowMat<T> dy_buf, x_buf, w_buf;
  const auto dym = detail::aligned_rows(dy.data(), rows, out, dy_buf);
  if (!d_weight.empty()) {
    MapRow<T>(d_weight.data(), out, in).noalias() += dym.transpose() * detail::aligned_rows(x.data(), rows, in, x_buf);
    MapVec<T>(d_bias.data(), out) += dym.colwise().sum().transpose();
  }
  std::vector<T> dx;
  if (want_dx) {
    dx.resize(std::size_t(rows) * in);
    MapRow<T>(dx.data(), rows, in).noalias() = dym * detail::aligned_rows(weight.data(), out, in, w_buf);
  }
  return dx;
}

// (C, B, H, W) feature map -> (B, C*H*W) rows, and back.
template <class T>
std::vector<T> flatten_rows(const Tensor<T>& x) {
  const int c = x.dim(0), b = x.dim(1);
  const auto p = x.plane();
  std::vector<T> out(x.size());
  for (int ci = 0; ci < c; ++ci)
    for (int bi = 0; bi < b; ++bi)
      std::copy_n(x.data() + (std::size_t(ci) * b + bi) * p, p, out.data() + (std::size_t(bi) * c + ci) * p);
  return out;
}

template <class T>
Tensor<T> unflatten_rows(std::span<const T> rows, int c, int b, int h, int w) {
  Tensor<T> x({c, b, h, w});
  const auto p = std::size_t(h) * w;
  for (int ci = 0; ci < c; ++ci)
    for (int bi = 0; bi < b; ++bi)
      std::copy_n(rows.data() + (std::size_t(bi) * c + ci) * p, p, x.data() + (std::size_t(ci) * b + bi) * p);
  return x;
}

}  // namespace introvae::layers
