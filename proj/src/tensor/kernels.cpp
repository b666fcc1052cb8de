#include "eva/kernels.hpp"

#include <cblas.h>

#include <algorithm>
#include <string>
#include <vector>

#include "eva/tensor.hpp"

namespace eva::kernels {

namespace {

// Upper bound on im2col tile size, in elements.
constexpr std::int64_t kTileBudget = std::int64_t{1} << 20;

Backend g_backend = Backend::parallel;

}  // namespace

void set_backend(Backend backend) { g_backend = backend; }
Backend backend() { return g_backend; }

Conv1dGeometry Conv1dGeometry::make(std::int64_t batch, std::int64_t in_channels,
                                    std::int64_t out_channels, std::int64_t in_length,
                                    std::int64_t kernel, std::int64_t stride, std::int64_t padding,
                                    std::int64_t dilation, std::int64_t groups) {
  if (groups <= 0 || in_channels % groups != 0) {
    throw DimensionError("conv1d: input axis 1 (channels) = " + std::to_string(in_channels) +
                         " is not divisible by groups = " + std::to_string(groups));
  }
  if (out_channels % groups != 0) {
    throw DimensionError("conv1d: weight axis 0 (out channels) = " + std::to_string(out_channels) +
                         " is not divisible by groups = " + std::to_string(groups));
  }
  if (kernel <= 0 || stride <= 0 || dilation <= 0 || padding < 0) {
    throw DimensionError("conv1d: kernel, stride and dilation must be positive, padding non-negative");
  }
  const std::int64_t span = dilation * (kernel - 1) + 1;
  if (in_length + 2 * padding < span) {
    throw DimensionError("conv1d: input axis 2 (length) = " + std::to_string(in_length) +
                         " with padding " + std::to_string(padding) + " is shorter than the receptive field " +
                         std::to_string(span));
  }
  Conv1dGeometry g;
  g.batch = batch;
  g.in_channels = in_channels;
  g.out_channels = out_channels;
  g.in_length = in_length;
  g.kernel = kernel;
  g.stride = stride;
  g.padding = padding;
  g.dilation = dilation;
  g.groups = groups;
  g.out_length = (in_length + 2 * padding - span) / stride + 1;
  return g;
}

Conv2dGeometry Conv2dGeometry::make(std::int64_t batch, std::int64_t in_channels,
                                    std::int64_t out_channels, std::int64_t in_h, std::int64_t in_w,
                                    std::int64_t kernel_h, std::int64_t kernel_w, std::int64_t stride_h,
                                    std::int64_t stride_w, std::int64_t pad_h, std::int64_t pad_w) {
  if (in_h + 2 * pad_h < kernel_h) {
    throw DimensionError("conv2d: input axis 2 (height) = " + std::to_string(in_h) +
                         " is smaller than kernel height " + std::to_string(kernel_h));
  }
  if (in_w + 2 * pad_w < kernel_w) {
    throw DimensionError("conv2d: input axis 3 (width) = " + std::to_string(in_w) +
                         " is smaller than kernel width " + std::to_string(kernel_w));
  }
  if (stride_h <= 0 || stride_w <= 0) throw DimensionError("conv2d: strides must be positive");
  Conv2dGeometry g;
  g.batch = batch;
  g.in_channels = in_channels;
  g.out_channels = out_channels;
  g.in_h = in_h;
  g.in_w = in_w;
  g.kernel_h = kernel_h;
  g.kernel_w = kernel_w;
  g.stride_h = stride_h;
  g.stride_w = stride_w;
  g.pad_h = pad_h;
  g.pad_w = pad_w;
  g.out_h = (in_h + 2 * pad_h - kernel_h) / stride_h + 1;
  g.out_w = (in_w + 2 * pad_w - kernel_w) / stride_w + 1;
  return g;
}

template <>
void gemm<float>(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, float alpha,
                 const float* a, std::int64_t lda, const float* b, std::int64_t ldb, float beta, float* c,
                 std::int64_t ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda), b,
              static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

template <>
void gemm<double>(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, double alpha,
                  const double* a, std::int64_t lda, const double* b, std::int64_t ldb, double beta, double* c,
                  std::int64_t ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda), b,
              static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

namespace {

// cols[(i*K + k) * tc + j] = x[i, (t0 + j) * stride + k * dilation - padding]
template <typename Real>
void im2col_1d(const Conv1dGeometry& g, std::int64_t channels, const Real* x, std::int64_t t0,
               std::int64_t tc, Real* cols) {
  for (std::int64_t i = 0; i < channels; ++i) {
    const Real* xi = x + i * g.in_length;
    for (std::int64_t k = 0; k < g.kernel; ++k) {
      Real* row = cols + (i * g.kernel + k) * tc;
      const std::int64_t offset = k * g.dilation - g.padding;
      for (std::int64_t j = 0; j < tc; ++j) {
        const std::int64_t pos = (t0 + j) * g.stride + offset;
        row[j] = (pos >= 0 && pos < g.in_length) ? xi[pos] : Real(0);
      }
    }
  }
}

template <typename Real>
void col2im_1d(const Conv1dGeometry& g, std::int64_t channels, const Real* cols, std::int64_t t0,
               std::int64_t tc, Real* dx) {
  for (std::int64_t i = 0; i < channels; ++i) {
    Real* dxi = dx + i * g.in_length;
    for (std::int64_t k = 0; k < g.kernel; ++k) {
      const Real* row = cols + (i * g.kernel + k) * tc;
      const std::int64_t offset = k * g.dilation - g.padding;
      for (std::int64_t j = 0; j < tc; ++j) {
        const std::int64_t pos = (t0 + j) * g.stride + offset;
        if (pos >= 0 && pos < g.in_length) dxi[pos] += row[j];
      }
    }
  }
}

bool is_pointwise(const Conv1dGeometry& g) {
  return g.kernel == 1 && g.stride == 1 && g.padding == 0;
}

bool is_depthwise(const Conv1dGeometry& g) {
  return g.groups == g.in_channels && g.groups == g.out_channels;
}

std::int64_t tile_columns(std::int64_t rows, std::int64_t total) {
  return std::clamp<std::int64_t>(kTileBudget / std::max<std::int64_t>(rows, 1), 1, total);
}

}  // namespace

template <typename Real>
void conv1d_forward(const Conv1dGeometry& g, const Real* x, const Real* w, const Real* bias, Real* y) {
  const std::int64_t cin_g = g.in_channels / g.groups;
  const std::int64_t cout_g = g.out_channels / g.groups;
  const std::int64_t rows = cin_g * g.kernel;

  if (is_depthwise(g)) {
    const std::int64_t planes = g.batch * g.in_channels;
#pragma omp parallel for if (planes > 1)
    for (std::int64_t p = 0; p < planes; ++p) {
      const std::int64_t c = p % g.in_channels;
      const Real* xp = x + p * g.in_length;
      Real* yp = y + p * g.out_length;
      const Real* wc = w + c * g.kernel;
      std::fill(yp, yp + g.out_length, bias ? bias[c] : Real(0));
      for (std::int64_t k = 0; k < g.kernel; ++k) {
        const std::int64_t offset = k * g.dilation - g.padding;
        const Real wk = wc[k];
        for (std::int64_t t = 0; t < g.out_length; ++t) {
          const std::int64_t pos = t * g.stride + offset;
          if (pos >= 0 && pos < g.in_length) yp[t] += wk * xp[pos];
        }
      }
    }
    return;
  }

  const std::int64_t jobs = g.batch * g.groups;
#pragma omp parallel for if (jobs > 1)
  for (std::int64_t job = 0; job < jobs; ++job) {
    const std::int64_t b = job / g.groups;
    const std::int64_t grp = job % g.groups;
    const Real* xg = x + (b * g.in_channels + grp * cin_g) * g.in_length;
    const Real* wg = w + grp * cout_g * rows;
    Real* yg = y + (b * g.out_channels + grp * cout_g) * g.out_length;
    for (std::int64_t o = 0; o < cout_g; ++o) {
      std::fill(yg + o * g.out_length, yg + (o + 1) * g.out_length,
                bias ? bias[grp * cout_g + o] : Real(0));
    }
    if (is_pointwise(g)) {
      gemm<Real>(false, false, cout_g, g.out_length, cin_g, 1, wg, rows, xg, g.in_length, 1, yg, g.out_length);
      continue;
    }
    const std::int64_t tc_max = tile_columns(rows, g.out_length);
    std::vector<Real> cols(static_cast<std::size_t>(rows * tc_max));
    for (std::int64_t t0 = 0; t0 < g.out_length; t0 += tc_max) {
      const std::int64_t tc = std::min(tc_max, g.out_length - t0);
      im2col_1d(g, cin_g, xg, t0, tc, cols.data());
      gemm<Real>(false, false, cout_g, tc, rows, 1, wg, rows, cols.data(), tc, 1, yg + t0, g.out_length);
    }
  }
}

template <typename Real>
void conv1d_backward_input(const Conv1dGeometry& g, const Real* dy, const Real* w, Real* dx) {
  const std::int64_t cin_g = g.in_channels / g.groups;
  const std::int64_t cout_g = g.out_channels / g.groups;
  const std::int64_t rows = cin_g * g.kernel;

  if (is_depthwise(g)) {
    const std::int64_t planes = g.batch * g.in_channels;
#pragma omp parallel for if (planes > 1)
    for (std::int64_t p = 0; p < planes; ++p) {
      const std::int64_t c = p % g.in_channels;
      const Real* dyp = dy + p * g.out_length;
      Real* dxp = dx + p * g.in_length;
      for (std::int64_t k = 0; k < g.kernel; ++k) {
        const std::int64_t offset = k * g.dilation - g.padding;
        const Real wk = w[c * g.kernel + k];
        for (std::int64_t t = 0; t < g.out_length; ++t) {
          const std::int64_t pos = t * g.stride + offset;
          if (pos >= 0 && pos < g.in_length) dxp[pos] += wk * dyp[t];
        }
      }
    }
    return;
  }

  const std::int64_t jobs = g.batch * g.groups;
#pragma omp parallel for if (jobs > 1)
  for (std::int64_t job = 0; job < jobs; ++job) {
    const std::int64_t b = job / g.groups;
    const std::int64_t grp = job % g.groups;
    const Real* dyg = dy + (b * g.out_channels + grp * cout_g) * g.out_length;
    const Real* wg = w + grp * cout_g * rows;
    Real* dxg = dx + (b * g.in_channels + grp * cin_g) * g.in_length;
    if (is_pointwise(g)) {
      gemm<Real>(true, false, cin_g, g.out_length, cout_g, 1, wg, rows, dyg, g.out_length, 1, dxg, g.in_length);
      continue;
    }
    const std::int64_t tc_max = tile_columns(rows, g.out_length);
    std::vector<Real> cols(static_cast<std::size_t>(rows * tc_max));
    for (std::int64_t t0 = 0; t0 < g.out_length; t0 += tc_max) {
      const std::int64_t tc = std::min(tc_max, g.out_length - t0);
      gemm<Real>(true, false, rows, tc, cout_g, 1, wg, rows, dyg + t0, g.out_length, 0, cols.data(), tc);
      col2im_1d(g, cin_g, cols.data(), t0, tc, dxg);
    }
  }
}

template <typename Real>
void conv1d_backward_weight(const Conv1dGeometry& g, const Real* dy, const Real* x, Real* dw, Real* dbias) {
  const std::int64_t cin_g = g.in_channels / g.groups;
  const std::int64_t cout_g = g.out_channels / g.groups;
  const std::int64_t rows = cin_g * g.kernel;

  if (dbias) {
    // Batch order is fixed so accumulation is reproducible.
#pragma omp parallel for if (g.out_channels > 1)
    for (std::int64_t o = 0; o < g.out_channels; ++o) {
      for (std::int64_t b = 0; b < g.batch; ++b) {
        const Real* row = dy + (b * g.out_channels + o) * g.out_length;
        Real s = 0;
        for (std::int64_t t = 0; t < g.out_length; ++t) s += row[t];
        dbias[o] += s;
      }
    }
  }

  if (is_depthwise(g)) {
#pragma omp parallel for if (g.in_channels > 1)
    for (std::int64_t c = 0; c < g.in_channels; ++c) {
      for (std::int64_t b = 0; b < g.batch; ++b) {
        const Real* dyp = dy + (b * g.in_channels + c) * g.out_length;
        const Real* xp = x + (b * g.in_channels + c) * g.in_length;
        for (std::int64_t k = 0; k < g.kernel; ++k) {
          const std::int64_t offset = k * g.dilation - g.padding;
          Real s = 0;
          for (std::int64_t t = 0; t < g.out_length; ++t) {
            const std::int64_t pos = t * g.stride + offset;
            if (pos >= 0 && pos < g.in_length) s += dyp[t] * xp[pos];
          }
          dw[c * g.kernel + k] += s;
        }
      }
    }
    return;
  }

#pragma omp parallel for if (g.groups > 1)
  for (std::int64_t grp = 0; grp < g.groups; ++grp) {
    Real* dwg = dw + grp * cout_g * rows;
    const std::int64_t tc_max = tile_columns(rows, g.out_length);
    std::vector<Real> cols;
    if (!is_pointwise(g)) cols.resize(static_cast<std::size_t>(rows * tc_max));
    for (std::int64_t b = 0; b < g.batch; ++b) {
      const Real* dyg = dy + (b * g.out_channels + grp * cout_g) * g.out_length;
      const Real* xg = x + (b * g.in_channels + grp * cin_g) * g.in_length;
      if (is_pointwise(g)) {
        gemm<Real>(false, true, cout_g, cin_g, g.out_length, 1, dyg, g.out_length, xg, g.in_length, 1, dwg, rows);
        continue;
      }
      for (std::int64_t t0 = 0; t0 < g.out_length; t0 += tc_max) {
        const std::int64_t tc = std::min(tc_max, g.out_length - t0);
        im2col_1d(g, cin_g, xg, t0, tc, cols.data());
        gemm<Real>(false, true, cout_g, rows, tc, 1, dyg + t0, g.out_length, cols.data(), tc, 1, dwg, rows);
      }
    }
  }
}

namespace {

// cols[((i*KH + kh)*KW + kw) * n + j] over output positions p in [p0, p0 + n).
// Visits the output positions [p0, p0 + n) one output row at a time and, for
// tap (kh, kw), calls fn(j0, j1, src_offset, step) with the column range of
// valid taps; positions outside [j0, j1) of that row read padding.
template <typename Fn>
void for_tap_rows(const Conv2dGeometry& g, std::int64_t p0, std::int64_t n, std::int64_t kh, std::int64_t kw,
                  Fn&& fn) {
  std::int64_t j = 0;
  while (j < n) {
    const std::int64_t p = p0 + j;
    const std::int64_t oh = p / g.out_w;
    const std::int64_t ow0 = p % g.out_w;
    const std::int64_t len = std::min(g.out_w - ow0, n - j);
    const std::int64_t h = oh * g.stride_h + kh - g.pad_h;
    std::int64_t lo = len, hi = len;
    if (h >= 0 && h < g.in_h) {
      // w = ow * stride + kw - pad must fall in [0, in_w).
      const std::int64_t base = kw - g.pad_w;
      std::int64_t first = base >= 0 ? 0 : (-base + g.stride_w - 1) / g.stride_w;
      std::int64_t last = (g.in_w - 1 - base) >= 0 ? (g.in_w - 1 - base) / g.stride_w + 1 : 0;
      first = std::max(first, ow0);
      last = std::min(last, ow0 + len);
      if (first < last) {
        lo = first - ow0;
        hi = last - ow0;
      }
    }
    fn(j, len, lo, hi, h * g.in_w + (ow0 + lo) * g.stride_w + kw - g.pad_w);
    j += len;
  }
}

template <typename Real>
void im2col_2d(const Conv2dGeometry& g, const Real* x, std::int64_t p0, std::int64_t n, Real* cols) {
  for (std::int64_t i = 0; i < g.in_channels; ++i) {
    const Real* xi = x + i * g.in_h * g.in_w;
    for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
      for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
        Real* row = cols + ((i * g.kernel_h + kh) * g.kernel_w + kw) * n;
        for_tap_rows(g, p0, n, kh, kw,
                     [&](std::int64_t j, std::int64_t len, std::int64_t lo, std::int64_t hi, std::int64_t src) {
                       Real* dst = row + j;
                       for (std::int64_t t = 0; t < lo; ++t) dst[t] = Real(0);
                       const Real* xs = xi + src;
                       if (g.stride_w == 1) {
                         for (std::int64_t t = lo; t < hi; ++t) dst[t] = xs[t - lo];
                       } else {
                         for (std::int64_t t = lo; t < hi; ++t) dst[t] = xs[(t - lo) * g.stride_w];
                       }
                       for (std::int64_t t = hi; t < len; ++t) dst[t] = Real(0);
                     });
      }
    }
  }
}

template <typename Real>
void col2im_2d(const Conv2dGeometry& g, const Real* cols, std::int64_t p0, std::int64_t n, Real* dx) {
  for (std::int64_t i = 0; i < g.in_channels; ++i) {
    Real* dxi = dx + i * g.in_h * g.in_w;
    for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
      for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
        const Real* row = cols + ((i * g.kernel_h + kh) * g.kernel_w + kw) * n;
        for_tap_rows(g, p0, n, kh, kw,
                     [&](std::int64_t j, std::int64_t, std::int64_t lo, std::int64_t hi, std::int64_t dst) {
                       const Real* src = row + j;
                       Real* xd = dxi + dst;
                       for (std::int64_t t = lo; t < hi; ++t) xd[(t - lo) * g.stride_w] += src[t];
                     });
      }
    }
  }
}

}  // namespace

template <typename Real>
void conv2d_forward(const Conv2dGeometry& g, const Real* x, const Real* w, const Real* bias, Real* y) {
  const std::int64_t rows = g.in_channels * g.kernel_h * g.kernel_w;
  const std::int64_t positions = g.out_h * g.out_w;
  const std::int64_t in_plane = g.in_channels * g.in_h * g.in_w;
#pragma omp parallel for if (g.batch > 1)
  for (std::int64_t b = 0; b < g.batch; ++b) {
    Real* yb = y + b * g.out_channels * positions;
    for (std::int64_t o = 0; o < g.out_channels; ++o) {
      std::fill(yb + o * positions, yb + (o + 1) * positions, bias ? bias[o] : Real(0));
    }
    const std::int64_t n_max = tile_columns(rows, positions);
    std::vector<Real> cols(static_cast<std::size_t>(rows * n_max));
    for (std::int64_t p0 = 0; p0 < positions; p0 += n_max) {
      const std::int64_t n = std::min(n_max, positions - p0);
      im2col_2d(g, x + b * in_plane, p0, n, cols.data());
      gemm<Real>(false, false, g.out_channels, n, rows, 1, w, rows, cols.data(), n, 1, yb + p0, positions);
    }
  }
}

template <typename Real>
void conv2d_backward_input(const Conv2dGeometry& g, const Real* dy, const Real* w, Real* dx) {
  const std::int64_t rows = g.in_channels * g.kernel_h * g.kernel_w;
  const std::int64_t positions = g.out_h * g.out_w;
  const std::int64_t in_plane = g.in_channels * g.in_h * g.in_w;
#pragma omp parallel for if (g.batch > 1)
  for (std::int64_t b = 0; b < g.batch; ++b) {
    const Real* dyb = dy + b * g.out_channels * positions;
    const std::int64_t n_max = tile_columns(rows, positions);
    std::vector<Real> cols(static_cast<std::size_t>(rows * n_max));
    for (std::int64_t p0 = 0; p0 < positions; p0 += n_max) {
      const std::int64_t n = std::min(n_max, positions - p0);
      gemm<Real>(true, false, rows, n, g.out_channels, 1, w, rows, dyb + p0, positions, 0, cols.data(), n);
      col2im_2d(g, cols.data(), p0, n, dx + b * in_plane);
    }
  }
}

template <typename Real>
void conv2d_backward_weight(const Conv2dGeometry& g, const Real* dy, const Real* x, Real* dw, Real* dbias) {
  const std::int64_t rows = g.in_channels * g.kernel_h * g.kernel_w;
  const std::int64_t positions = g.out_h * g.out_w;
  const std::int64_t in_plane = g.in_channels * g.in_h * g.in_w;
  if (dbias) {
    for (std::int64_t b = 0; b < g.batch; ++b) {
      for (std::int64_t o = 0; o < g.out_channels; ++o) {
        const Real* row = dy + (b * g.out_channels + o) * positions;
        Real s = 0;
        for (std::int64_t p = 0; p < positions; ++p) s += row[p];
        dbias[o] += s;
      }
    }
  }
  const std::int64_t n_max = tile_columns(rows, positions);
  std::vector<Real> cols(static_cast<std::size_t>(rows * n_max));
  for (std::int64_t b = 0; b < g.batch; ++b) {
    const Real* dyb = dy + b * g.out_channels * positions;
    for (std::int64_t p0 = 0; p0 < positions; p0 += n_max) {
      const std::int64_t n = std::min(n_max, positions - p0);
      im2col_2d(g, x + b * in_plane, p0, n, cols.data());
      gemm<Real>(false, true, g.out_channels, rows, n, 1, dyb + p0, positions, cols.data(), n, 1, dw, rows);
    }
  }
}

#define EVA_INSTANTIATE(Real)                                                                          \
  template void conv1d_forward(const Conv1dGeometry&, const Real*, const Real*, const Real*, Real*);   \
  template void conv1d_backward_input(const Conv1dGeometry&, const Real*, const Real*, Real*);         \
  template void conv1d_backward_weight(const Conv1dGeometry&, const Real*, const Real*, Real*, Real*); \
  template void conv2d_forward(const Conv2dGeometry&, const Real*, const Real*, const Real*, Real*);   \
  template void conv2d_backward_input(const Conv2dGeometry&, const Real*, const Real*, Real*);         \
  template void conv2d_backward_weight(const Conv2dGeometry&, const Real*, const Real*, Real*, Real*);

EVA_INSTANTIATE(float)
EVA_INSTANTIATE(double)
#undef EVA_INSTANTIATE

}  // namespace eva::kernels
