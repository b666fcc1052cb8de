#pragma once

#include <cstdint>

// Convolution kernels over raw row-major buffers. Two implementations share
// one interface: `eva::kernels` (OpenMP over batch/group, BLAS GEMM on
// im2col tiles) and `eva::kernels::reference` (serial nested loops, kept as
// the test oracle and benchmark baseline). Backward kernels accumulate.

namespace eva::kernels {

enum class Backend { parallel, reference };

/// Selects which implementation the tensor ops dispatch to (process-wide).
void set_backend(Backend backend);
Backend backend();

struct Conv1dGeometry {
  std::int64_t batch = 1;
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t in_length = 1;
  std::int64_t out_length = 1;
  std::int64_t kernel = 1;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t dilation = 1;
  std::int64_t groups = 1;

  /// Fills out_length; throws DimensionError when the receptive field does
  /// not fit the padded input or channels are not divisible by groups.
  static Conv1dGeometry make(std::int64_t batch, std::int64_t in_channels, std::int64_t out_channels,
                             std::int64_t in_length, std::int64_t kernel, std::int64_t stride,
                             std::int64_t padding, std::int64_t dilation, std::int64_t groups);
};

struct Conv2dGeometry {
  std::int64_t batch = 1;
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t in_h = 1, in_w = 1;
  std::int64_t out_h = 1, out_w = 1;
  std::int64_t kernel_h = 1, kernel_w = 1;
  std::int64_t stride_h = 1, stride_w = 1;
  std::int64_t pad_h = 0, pad_w = 0;

  static Conv2dGeometry make(std::int64_t batch, std::int64_t in_channels, std::int64_t out_channels,
                             std::int64_t in_h, std::int64_t in_w, std::int64_t kernel_h,
                             std::int64_t kernel_w, std::int64_t stride_h, std::int64_t stride_w,
                             std::int64_t pad_h, std::int64_t pad_w);
};

// x: [B, Cin, L], w: [Cout, Cin/groups, K], bias: [Cout] or nullptr, y: [B, Cout, L'].
template <typename Real>
void conv1d_forward(const Conv1dGeometry& g, const Real* x, const Real* w, const Real* bias, Real* y);
template <typename Real>
void conv1d_backward_input(const Conv1dGeometry& g, const Real* dy, const Real* w, Real* dx);
template <typename Real>
void conv1d_backward_weight(const Conv1dGeometry& g, const Real* dy, const Real* x, Real* dw, Real* dbias);

// x: [B, Cin, H, W], w: [Cout, Cin, KH, KW].
template <typename Real>
void conv2d_forward(const Conv2dGeometry& g, const Real* x, const Real* w, const Real* bias, Real* y);
template <typename Real>
void conv2d_backward_input(const Conv2dGeometry& g, const Real* dy, const Real* w, Real* dx);
template <typename Real>
void conv2d_backward_weight(const Conv2dGeometry& g, const Real* dy, const Real* x, Real* dw, Real* dbias);

/// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C.
template <typename Real>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, Real alpha,
          const Real* a, std::int64_t lda, const Real* b, std::int64_t ldb, Real beta, Real* c,
          std::int64_t ldc);

namespace reference {

template <typename Real>
void conv1d_forward(const Conv1dGeometry& g, const Real* x, const Real* w, const Real* bias, Real* y);
template <typename Real>
void conv1d_backward_input(const Conv1dGeometry& g, const Real* dy, const Real* w, Real* dx);
template <typename Real>
void conv1d_backward_weight(const Conv1dGeometry& g, const Real* dy, const Real* x, Real* dw, Real* dbias);

/// Direct scatter-accumulate transposed convolution.
/// x: [B, Cin, T], w: [Cin, Cout, K], y: [B, Cout, (T-1)*stride - 2*padding + K].
template <typename Real>
void conv_transpose1d_forward(std::int64_t batch, std::int64_t in_channels, std::int64_t out_channels,
                              std::int64_t in_length, std::int64_t kernel, std::int64_t stride,
                              std::int64_t padding, const Real* x, const Real* w, const Real* bias, Real* y);

template <typename Real>
void conv2d_forward(const Conv2dGeometry& g, const Real* x, const Real* w, const Real* bias, Real* y);
template <typename Real>
void conv2d_backward_input(const Conv2dGeometry& g, const Real* dy, const Real* w, Real* dx);
template <typename Real>
void conv2d_backward_weight(const Conv2dGeometry& g, const Real* dy, const Real* x, Real* dw, Real* dbias);

}  // namespace reference

}  // namespace eva::kernels
