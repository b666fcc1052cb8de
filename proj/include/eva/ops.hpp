#pragma once

#include <cstdint>
#include <span>

#include "eva/tensor.hpp"

// Differentiable tensor operations. Layout is channels-first: 1-D signals are
// [B, C, T], images are [B, C, H, W].

namespace eva {

enum class ActivationKind { silu, leaky_relu, tanh, sigmoid };

struct Activation {
  ActivationKind kind = ActivationKind::silu;
  double alpha = 0.1;  // leaky_relu slope

  static Activation silu() { return {ActivationKind::silu, 0.0}; }
  static Activation leaky_relu(double alpha) { return {ActivationKind::leaky_relu, alpha}; }
  static Activation tanh() { return {ActivationKind::tanh, 0.0}; }
  static Activation sigmoid() { return {ActivationKind::sigmoid, 0.0}; }
};

enum class Reduction { mean_abs, mean_sq, sum, mean };

struct Conv1dOptions {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t dilation = 1;
  std::int64_t groups = 1;
};

struct Conv2dOptions {
  std::int64_t stride_h = 1;
  std::int64_t stride_w = 1;
  std::int64_t pad_h = 0;
  std::int64_t pad_w = 0;
};

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);
/// Elementwise quotient; the caller keeps b away from zero.
template <typename Real>
Tensor<Real> div(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, double factor);
template <typename Real>
Tensor<Real> add_scalar(const Tensor<Real>& a, double value);
/// Elementwise sum of same-shaped tensors.
template <typename Real>
Tensor<Real> add_n(std::span<const Tensor<Real>> terms);

template <typename Real>
Tensor<Real> activation(const Tensor<Real>& x, Activation kind);

/// log(max(x, floor)); zero gradient where the floor is active.
template <typename Real>
Tensor<Real> log_clamped(const Tensor<Real>& x, double floor);
template <typename Real>
Tensor<Real> log(const Tensor<Real>& x);

/// Scalar reduction; result has shape [1].
template <typename Real>
Tensor<Real> reduce(const Tensor<Real>& x, Reduction kind);
/// Frobenius norm; gradient defined as zero at the origin.
template <typename Real>
Tensor<Real> l2_norm(const Tensor<Real>& x);

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape);
/// Swaps the last two axes.
template <typename Real>
Tensor<Real> transpose_last2(const Tensor<Real>& x);
/// Reflect padding (edge not repeated) on the last axis; left, right < length.
template <typename Real>
Tensor<Real> pad_reflect(const Tensor<Real>& x, std::int64_t left, std::int64_t right);
template <typename Real>
Tensor<Real> slice_last(const Tensor<Real>& x, std::int64_t start, std::int64_t length);

/// Normalizes [B, C, T] across C at every (b, t), then applies per-channel
/// gamma/beta.
template <typename Real>
Tensor<Real> layer_norm_channels(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                                 double eps);

/// x [B, Cin, T], weight [Cout, Cin/groups, K], bias [Cout] or undefined.
template <typename Real>
Tensor<Real> conv1d(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias,
                    Conv1dOptions options);

/// x [B, Cin, T], weight [Cin, Cout, K]. Output length (T-1)*stride - 2*padding + K.
template <typename Real>
Tensor<Real> conv_transpose1d(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias,
                              std::int64_t stride, std::int64_t padding);

/// x [B, Cin, H, W], weight [Cout, Cin, KH, KW].
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias,
                    Conv2dOptions options);

/// x [..., K] times weight [M, K] transposed: [..., M].
template <typename Real>
Tensor<Real> linear_last(const Tensor<Real>& x, const Tensor<Real>& weight);

/// Per-sample residual-branch dropout: sample b is zeroed when keep[b] == 0,
/// otherwise scaled by 1 / keep_prob.
template <typename Real>
Tensor<Real> drop_path(const Tensor<Real>& x, std::span<const std::uint8_t> keep, double keep_prob);

}  // namespace eva
