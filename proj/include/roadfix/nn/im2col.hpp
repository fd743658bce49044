#pragma once

#include <algorithm>
#include <cstring>

#include <Eigen/Core>

namespace roadfix::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using ColMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
/// A row-major (r x c) buffer viewed as its (c x r) transpose without copying.
template <typename T>
using ConstTransposedMap = Eigen::Map<const ColMatrix<T>>;

/// Geometry of a 2-D convolution over one (channels, height, width) image.
struct ConvGeometry {
  int channels = 1;
  int height = 1;
  int width = 1;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  int dilation = 1;

  int out_height() const { return (height + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1; }
  int out_width() const { return (width + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1; }
  int col_rows() const { return channels * kernel * kernel; }
  int col_cols() const { return out_height() * out_width(); }
};

namespace detail {

inline int ceil_div(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }
inline int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

// Output columns [lo, hi) whose tap lands inside the row for tap offset `off`.
inline void valid_span(int out_len, int in_len, int stride, int off, int& lo, int& hi) {
  // Taps far outside a small input leave an empty span; keep it inside the row.
  lo = std::clamp(ceil_div(-off, stride), 0, out_len);
  hi = std::clamp(floor_div(in_len - 1 - off, stride) + 1, lo, out_len);
}

}  // namespace detail

/// Unfolds output rows [oy0, oy1) of `img` (channels x height x width) into
/// `col`, a (col_rows x (oy1-oy0)*out_width) matrix; row index is
/// (channel, ky, kx), column index is (oy, ox). Zero padding.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col, int oy0, int oy1) {
  const int oh = oy1 - oy0, ow = g.out_width();
  const int k = g.kernel, s = g.stride;
  for (int c = 0; c < g.channels; ++c) {
    const T* plane = img + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * oh * ow;
        const int dy = ky * g.dilation - g.pad, dx = kx * g.dilation - g.pad;
        int x0, x1;
        detail::valid_span(ow, g.width, s, dx, x0, x1);
        for (int r = 0; r < oh; ++r) {
          T* out = row + static_cast<std::size_t>(r) * ow;
          const int iy = (oy0 + r) * s + dy;
          if (iy < 0 || iy >= g.height) {
            std::fill(out, out + ow, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.width + dx;
          std::fill(out, out + x0, T{0});
          if (s == 1) {
            std::memcpy(out + x0, src + x0, sizeof(T) * (x1 - x0));
          } else {
            for (int ox = x0; ox < x1; ++ox) out[ox] = src[ox * s];
          }
          std::fill(out + x1, out + ow, T{0});
        }
      }
    }
  }
}

/// Adjoint of im2col over the same row range: scatters `col` back,
/// accumulating into `img`.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* img, int oy0, int oy1) {
  const int oh = oy1 - oy0, ow = g.out_width();
  const int k = g.kernel, s = g.stride;
  for (int c = 0; c < g.channels; ++c) {
    T* plane = img + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * oh * ow;
        const int dy = ky * g.dilation - g.pad, dx = kx * g.dilation - g.pad;
        int x0, x1;
        detail::valid_span(ow, g.width, s, dx, x0, x1);
        for (int r = 0; r < oh; ++r) {
          const int iy = (oy0 + r) * s + dy;
          if (iy < 0 || iy >= g.height) continue;
          const T* in = row + static_cast<std::size_t>(r) * ow;
          T* dst = plane + static_cast<std::size_t>(iy) * g.width + dx;
          if (s == 1) {
            for (int ox = x0; ox < x1; ++ox) dst[ox] += in[ox];
          } else {
            for (int ox = x0; ox < x1; ++ox) dst[ox * s] += in[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  im2col(img, g, col, 0, g.out_height());
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* img) {
  col2im(col, g, img, 0, g.out_height());
}

/// Output rows per im2col chunk so that one chunk stays cache resident.
inline int chunk_rows(const ConvGeometry& g, std::size_t budget_elems = std::size_t{1} << 17) {
  const std::size_t per_row = static_cast<std::size_t>(g.col_rows()) * g.out_width();
  return static_cast<int>(std::clamp<std::size_t>(budget_elems / std::max<std::size_t>(per_row, 1), 1,
                                                  static_cast<std::size_t>(g.out_height())));
}

/// Direct convolution for layers with very few output channels, where
/// unfolding the input would cost far more than the arithmetic.
/// weight is (out, channels, k, k); y is (out, oh, ow) and is overwritten.
template <typename T>
void conv_direct(const T* img, const ConvGeometry& g, const T* weight, const T* bias, int out, T* y) {
  const int oh = g.out_height(), ow = g.out_width(), k = g.kernel, s = g.stride;
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  for (int o = 0; o < out; ++o) std::fill(y + o * plane, y + (o + 1) * plane, bias[o]);
  for (int o = 0; o < out; ++o) {
    T* yo = y + o * plane;
    for (int c = 0; c < g.channels; ++c) {
      const T* src_plane = img + static_cast<std::size_t>(c) * g.height * g.width;
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const T wv = weight[((static_cast<std::size_t>(o) * g.channels + c) * k + ky) * k + kx];
          const int dy = ky * g.dilation - g.pad, dx = kx * g.dilation - g.pad;
          int x0, x1;
          detail::valid_span(ow, g.width, s, dx, x0, x1);
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * s + dy;
            if (iy < 0 || iy >= g.height) continue;
            const T* src = src_plane + static_cast<std::size_t>(iy) * g.width + dx;
            T* dst = yo + static_cast<std::size_t>(oy) * ow;
            for (int ox = x0; ox < x1; ++ox) dst[ox] += wv * src[ox * s];
          }
        }
    }
  }
}

/// Backward of conv_direct: accumulates into grad_weight / grad_bias and,
/// when grad_img is non-null, into the input gradient.
template <typename T>
void conv_direct_backward(const T* img, const ConvGeometry& g, const T* weight, int out, const T* gy,
                          T* grad_weight, T* grad_bias, T* grad_img) {
  const int oh = g.out_height(), ow = g.out_width(), k = g.kernel, s = g.stride;
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  for (int o = 0; o < out; ++o) {
    const T* go = gy + o * plane;
    if (grad_bias) {
      T acc{0};
      for (std::size_t i = 0; i < plane; ++i) acc += go[i];
      grad_bias[o] += acc;
    }
    for (int c = 0; c < g.channels; ++c) {
      const std::size_t in_off = static_cast<std::size_t>(c) * g.height * g.width;
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const std::size_t widx = ((static_cast<std::size_t>(o) * g.channels + c) * k + ky) * k + kx;
          const T wv = weight[widx];
          const int dy = ky * g.dilation - g.pad, dx = kx * g.dilation - g.pad;
          int x0, x1;
          detail::valid_span(ow, g.width, s, dx, x0, x1);
          T acc{0};
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * s + dy;
            if (iy < 0 || iy >= g.height) continue;
            const std::size_t row = in_off + static_cast<std::size_t>(iy) * g.width + dx;
            const T* g_row = go + static_cast<std::size_t>(oy) * ow;
            if (grad_weight && x1 > x0) {
              using Strided = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>, 0, Eigen::InnerStride<>>;
              using Contig = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
              acc += Contig(g_row + x0, x1 - x0).dot(Strided(img + row + static_cast<std::ptrdiff_t>(x0) * s, x1 - x0,
                                                             Eigen::InnerStride<>(s)));
            }
            if (grad_img) {
              T* dst = grad_img + row;
              for (int ox = x0; ox < x1; ++ox) dst[ox * s] += wv * g_row[ox];
            }
          }
          if (grad_weight) grad_weight[widx] += acc;
        }
    }
  }
}

}  // namespace roadfix::nn
