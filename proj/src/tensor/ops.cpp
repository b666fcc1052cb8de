#include "eva/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "eva/kernels.hpp"

namespace eva {

using detail::make_result;
using detail::Node;
using detail::wants;

namespace {

constexpr std::int64_t kParallelThreshold = 1 << 15;

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(op) + ": rank mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) {
      throw DimensionError(std::string(op) + ": axis " + std::to_string(i) + " is " + std::to_string(a[i]) +
                           " vs " + std::to_string(b[i]));
    }
  }
}

void require_rank(const char* op, const char* what, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         shape_string(s));
  }
}

template <typename Real>
std::vector<Real>& grad_of(Node<Real>& self, std::size_t input) {
  auto& in = *self.inputs[input];
  in.ensure_grad();
  return in.grad;
}

template <typename Real>
void kconv1d_forward(const kernels::Conv1dGeometry& g, const Real* x, const Real* w, const Real* b, Real* y) {
  if (kernels::backend() == kernels::Backend::reference) {
    kernels::reference::conv1d_forward(g, x, w, b, y);
  } else {
    kernels::conv1d_forward(g, x, w, b, y);
  }
}

template <typename Real>
void kconv1d_backward_input(const kernels::Conv1dGeometry& g, const Real* dy, const Real* w, Real* dx) {
  if (kernels::backend() == kernels::Backend::reference) {
    kernels::reference::conv1d_backward_input(g, dy, w, dx);
  } else {
    kernels::conv1d_backward_input(g, dy, w, dx);
  }
}

template <typename Real>
void kconv1d_backward_weight(const kernels::Conv1dGeometry& g, const Real* dy, const Real* x, Real* dw,
                             Real* db) {
  if (kernels::backend() == kernels::Backend::reference) {
    kernels::reference::conv1d_backward_weight(g, dy, x, dw, db);
  } else {
    kernels::conv1d_backward_weight(g, dy, x, dw, db);
  }
}

}  // namespace

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape("add", a.shape(), b.shape());
  const auto n = static_cast<std::int64_t>(a.numel());
  std::vector<Real> out(static_cast<std::size_t>(n));
  const Real* pa = a.data().data();
  const Real* pb = b.data().data();
#pragma omp parallel for simd if (n > kParallelThreshold)
  for (std::int64_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
  return make_result<Real>(a.shape(), std::move(out), "add", {a, b}, [](Node<Real>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants(self, k)) continue;
      auto& g = grad_of(self, k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape("sub", a.shape(), b.shape());
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result<Real>(a.shape(), std::move(out), "sub", {a, b}, [](Node<Real>& self) {
    if (wants(self, 0)) {
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape("mul", a.shape(), b.shape());
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result<Real>(a.shape(), std::move(out), "mul", {a, b}, [](Node<Real>& self) {
    const auto& x = self.inputs[0]->data;
    const auto& y = self.inputs[1]->data;
    if (wants(self, 0)) {
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i];
    }
    if (wants(self, 1)) {
      auto& g = grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x[i];
    }
  });
}

template <typename Real>
Tensor<Real> div(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape("div", a.shape(), b.shape());
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  return make_result<Real>(a.shape(), std::move(out), "div", {a, b}, [](Node<Real>& self) {
    const auto& y = self.inputs[1]->data;
    if (wants(self, 0)) {
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / y[i];
    }
    if (wants(self, 1)) {
      auto& g = grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.data[i] / y[i];
    }
  });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, double factor) {
  const Real f = static_cast<Real>(factor);
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * f;
  return make_result<Real>(a.shape(), std::move(out), "scale", {a}, [f](Node<Real>& self) {
    auto& g = grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * f;
  });
}

template <typename Real>
Tensor<Real> add_scalar(const Tensor<Real>& a, double value) {
  const Real v = static_cast<Real>(value);
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + v;
  return make_result<Real>(a.shape(), std::move(out), "add_scalar", {a}, [](Node<Real>& self) {
    auto& g = grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename Real>
Tensor<Real> add_n(std::span<const Tensor<Real>> terms) {
  if (terms.empty()) throw DimensionError("add_n: no terms");
  for (const auto& t : terms) require_same_shape("add_n", terms[0].shape(), t.shape());
  std::vector<Real> out(terms[0].data().begin(), terms[0].data().end());
  for (std::size_t k = 1; k < terms.size(); ++k) {
    const auto d = terms[k].data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += d[i];
  }
  std::vector<Tensor<Real>> inputs(terms.begin(), terms.end());
  return make_result<Real>(terms[0].shape(), std::move(out), "add_n", std::move(inputs), [](Node<Real>& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      if (!wants(self, k)) continue;
      auto& g = grad_of(self, k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename Real>
Tensor<Real> activation(const Tensor<Real>& x, Activation kind) {
  const auto n = static_cast<std::int64_t>(x.numel());
  std::vector<Real> out(static_cast<std::size_t>(n));
  const Real* px = x.data().data();
  const Real alpha = static_cast<Real>(kind.alpha);
  switch (kind.kind) {
    case ActivationKind::silu:
#pragma omp parallel for simd if (n > kParallelThreshold)
      for (std::int64_t i = 0; i < n; ++i) out[i] = px[i] / (Real(1) + std::exp(-px[i]));
      break;
    case ActivationKind::leaky_relu:
      for (std::int64_t i = 0; i < n; ++i) out[i] = px[i] > 0 ? px[i] : alpha * px[i];
      break;
    case ActivationKind::tanh:
      for (std::int64_t i = 0; i < n; ++i) out[i] = std::tanh(px[i]);
      break;
    case ActivationKind::sigmoid:
      for (std::int64_t i = 0; i < n; ++i) out[i] = Real(1) / (Real(1) + std::exp(-px[i]));
      break;
  }
  return make_result<Real>(x.shape(), std::move(out), "activation", {x}, [kind, alpha](Node<Real>& self) {
    const auto& xv = self.inputs[0]->data;
    const auto& yv = self.data;
    auto& g = grad_of(self, 0);
    const auto m = static_cast<std::int64_t>(g.size());
    switch (kind.kind) {
      case ActivationKind::silu:
#pragma omp parallel for if (m > kParallelThreshold)
        for (std::int64_t i = 0; i < m; ++i) {
          const Real s = Real(1) / (Real(1) + std::exp(-xv[i]));
          g[i] += self.grad[i] * s * (Real(1) + xv[i] * (Real(1) - s));
        }
        break;
      case ActivationKind::leaky_relu:
        for (std::int64_t i = 0; i < m; ++i) g[i] += self.grad[i] * (xv[i] > 0 ? Real(1) : alpha);
        break;
      case ActivationKind::tanh:
        for (std::int64_t i = 0; i < m; ++i) g[i] += self.grad[i] * (Real(1) - yv[i] * yv[i]);
        break;
      case ActivationKind::sigmoid:
        for (std::int64_t i = 0; i < m; ++i) g[i] += self.grad[i] * yv[i] * (Real(1) - yv[i]);
        break;
    }
  });
}

template <typename Real>
Tensor<Real> log_clamped(const Tensor<Real>& x, double floor) {
  const Real f = static_cast<Real>(floor);
  std::vector<Real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(x[i], f));
  return make_result<Real>(x.shape(), std::move(out), "log_clamped", {x}, [f](Node<Real>& self) {
    const auto& xv = self.inputs[0]->data;
    auto& g = grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > f) g[i] += self.grad[i] / xv[i];
    }
  });
}

template <typename Real>
Tensor<Real> log(const Tensor<Real>& x) {
  std::vector<Real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x[i]);
  return make_result<Real>(x.shape(), std::move(out), "log", {x}, [](Node<Real>& self) {
    const auto& xv = self.inputs[0]->data;
    auto& g = grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / xv[i];
  });
}

template <typename Real>
Tensor<Real> reduce(const Tensor<Real>& x, Reduction kind) {
  if (!x.defined() || x.numel() == 0) throw DimensionError("reduce: empty tensor");
  const auto d = x.data();
  const double n = static_cast<double>(d.size());
  double acc = 0.0;
  switch (kind) {
    case Reduction::mean_abs:
      for (Real v : d) acc += std::abs(static_cast<double>(v));
      acc /= n;
      break;
    case Reduction::mean_sq:
      for (Real v : d) acc += static_cast<double>(v) * static_cast<double>(v);
      acc /= n;
      break;
    case Reduction::sum:
      for (Real v : d) acc += v;
      break;
    case Reduction::mean:
      for (Real v : d) acc += v;
      acc /= n;
      break;
  }
  return make_result<Real>(Shape{1}, {static_cast<Real>(acc)}, "reduce", {x}, [kind, n](Node<Real>& self) {
    const auto& xv = self.inputs[0]->data;
    auto& g = grad_of(self, 0);
    const Real up = self.grad[0];
    switch (kind) {
      case Reduction::mean_abs: {
        const Real s = static_cast<Real>(up / n);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += xv[i] > 0 ? s : (xv[i] < 0 ? -s : Real(0));
        break;
      }
      case Reduction::mean_sq: {
        const Real s = static_cast<Real>(2.0 * up / n);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * xv[i];
        break;
      }
      case Reduction::sum:
        for (auto& v : g) v += up;
        break;
      case Reduction::mean: {
        const Real s = static_cast<Real>(up / n);
        for (auto& v : g) v += s;
        break;
      }
    }
  });
}

template <typename Real>
Tensor<Real> l2_norm(const Tensor<Real>& x) {
  double sq = 0.0;
  for (Real v : x.data()) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  return make_result<Real>(Shape{1}, {static_cast<Real>(norm)}, "l2_norm", {x}, [norm](Node<Real>& self) {
    if (norm == 0.0) return;
    const auto& xv = self.inputs[0]->data;
    auto& g = grad_of(self, 0);
    const Real s = static_cast<Real>(self.grad[0] / norm);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * xv[i];
  });
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
  if (element_count(shape) != static_cast<std::int64_t>(x.numel())) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  std::vector<Real> out(x.data().begin(), x.data().end());
  return make_result<Real>(std::move(shape), std::move(out), "reshape", {x}, [](Node<Real>& self) {
    auto& g = grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename Real>
Tensor<Real> transpose_last2(const Tensor<Real>& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last2: need rank >= 2, got " + shape_string(x.shape()));
  Shape shape = x.shape();
  const std::int64_t rows = shape[shape.size() - 2];
  const std::int64_t cols = shape[shape.size() - 1];
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  const std::int64_t planes = static_cast<std::int64_t>(x.numel()) / (rows * cols);
  std::vector<Real> out(x.numel());
  const auto d = x.data();
  for (std::int64_t p = 0; p < planes; ++p) {
    const Real* src = d.data() + p * rows * cols;
    Real* dst = out.data() + p * rows * cols;
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
  return make_result<Real>(std::move(shape), std::move(out), "transpose_last2", {x},
                           [planes, rows, cols](Node<Real>& self) {
                             auto& g = grad_of(self, 0);
                             for (std::int64_t p = 0; p < planes; ++p) {
                               Real* dst = g.data() + p * rows * cols;
                               const Real* src = self.grad.data() + p * rows * cols;
                               for (std::int64_t r = 0; r < rows; ++r)
                                 for (std::int64_t c = 0; c < cols; ++c) dst[r * cols + c] += src[c * rows + r];
                             }
                           });
}

template <typename Real>
Tensor<Real> pad_reflect(const Tensor<Real>& x, std::int64_t left, std::int64_t right) {
  if (x.rank() < 1) throw DimensionError("pad_reflect: scalar input");
  const std::int64_t len = x.shape().back();
  if (left < 0 || right < 0 || left >= len || right >= len) {
    throw DimensionError("pad_reflect: last axis length " + std::to_string(len) + " too short for padding (" +
                         std::to_string(left) + ", " + std::to_string(right) + ")");
  }
  const std::int64_t out_len = len + left + right;
  const std::int64_t rows = static_cast<std::int64_t>(x.numel()) / len;
  auto source = [len, left](std::int64_t u) {
    std::int64_t s = u - left;
    if (s < 0) s = -s;
    if (s >= len) s = 2 * (len - 1) - s;
    return s;
  };
  Shape shape = x.shape();
  shape.back() = out_len;
  std::vector<Real> out(static_cast<std::size_t>(rows * out_len));
  const auto d = x.data();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t u = 0; u < out_len; ++u) out[r * out_len + u] = d[r * len + source(u)];
  return make_result<Real>(std::move(shape), std::move(out), "pad_reflect", {x},
                           [rows, len, out_len, source](Node<Real>& self) {
                             auto& g = grad_of(self, 0);
                             for (std::int64_t r = 0; r < rows; ++r)
                               for (std::int64_t u = 0; u < out_len; ++u)
                                 g[r * len + source(u)] += self.grad[r * out_len + u];
                           });
}

template <typename Real>
Tensor<Real> slice_last(const Tensor<Real>& x, std::int64_t start, std::int64_t length) {
  const std::int64_t len = x.shape().back();
  if (start < 0 || length <= 0 || start + length > len) {
    throw DimensionError("slice_last: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") outside last axis of length " + std::to_string(len));
  }
  const std::int64_t rows = static_cast<std::int64_t>(x.numel()) / len;
  Shape shape = x.shape();
  shape.back() = length;
  std::vector<Real> out(static_cast<std::size_t>(rows * length));
  const auto d = x.data();
  for (std::int64_t r = 0; r < rows; ++r)
    std::copy_n(d.data() + r * len + start, length, out.data() + r * length);
  return make_result<Real>(std::move(shape), std::move(out), "slice_last", {x},
                           [rows, len, start, length](Node<Real>& self) {
                             auto& g = grad_of(self, 0);
                             for (std::int64_t r = 0; r < rows; ++r)
                               for (std::int64_t j = 0; j < length; ++j)
                                 g[r * len + start + j] += self.grad[r * length + j];
                           });
}

template <typename Real>
Tensor<Real> layer_norm_channels(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                                 double eps) {
  if (!(eps > 0)) throw std::invalid_argument("layer_norm_channels: eps must be positive");
  require_rank("layer_norm_channels", "input", x.shape(), 3);
  const std::int64_t batch = x.dim(0), channels = x.dim(1), length = x.dim(2);
  if (gamma.numel() != static_cast<std::size_t>(channels) || beta.numel() != static_cast<std::size_t>(channels)) {
    throw DimensionError("layer_norm_channels: input axis 1 (channels) = " + std::to_string(channels) +
                         " but gamma/beta have " + std::to_string(gamma.numel()) + "/" +
                         std::to_string(beta.numel()));
  }
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  // Normalized values and inverse std are kept for the backward pass.
  std::vector<Real> xhat(x.numel());
  std::vector<Real> inv_std(static_cast<std::size_t>(batch * length));
  std::vector<Real> out(x.numel());
  for (std::int64_t b = 0; b < batch; ++b) {
    const Real* xb = xd.data() + b * channels * length;
    std::vector<double> mean(static_cast<std::size_t>(length), 0.0), var(static_cast<std::size_t>(length), 0.0);
    for (std::int64_t c = 0; c < channels; ++c)
      for (std::int64_t t = 0; t < length; ++t) mean[t] += xb[c * length + t];
    for (auto& m : mean) m /= static_cast<double>(channels);
    for (std::int64_t c = 0; c < channels; ++c)
      for (std::int64_t t = 0; t < length; ++t) {
        const double dv = xb[c * length + t] - mean[t];
        var[t] += dv * dv;
      }
    Real* istd = inv_std.data() + b * length;
    for (std::int64_t t = 0; t < length; ++t) {
      istd[t] = static_cast<Real>(1.0 / std::sqrt(var[t] / static_cast<double>(channels) + eps));
    }
    for (std::int64_t c = 0; c < channels; ++c) {
      for (std::int64_t t = 0; t < length; ++t) {
        const std::size_t i = static_cast<std::size_t>((b * channels + c) * length + t);
        xhat[i] = static_cast<Real>((xb[c * length + t] - mean[t]) * istd[t]);
        out[i] = gd[c] * xhat[i] + bd[c];
      }
    }
  }
  return make_result<Real>(
      x.shape(), std::move(out), "layer_norm_channels", {x, gamma, beta},
      [batch, channels, length, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<Real>& self) {
        const auto& gd = self.inputs[1]->data;
        const auto& up = self.grad;
        if (wants(self, 1) || wants(self, 2)) {
          std::vector<Real> dgamma(static_cast<std::size_t>(channels), 0), dbeta(static_cast<std::size_t>(channels), 0);
          for (std::int64_t b = 0; b < batch; ++b)
            for (std::int64_t c = 0; c < channels; ++c)
              for (std::int64_t t = 0; t < length; ++t) {
                const std::size_t i = static_cast<std::size_t>((b * channels + c) * length + t);
                dgamma[c] += up[i] * xhat[i];
                dbeta[c] += up[i];
              }
          if (wants(self, 1)) {
            auto& g = grad_of(self, 1);
            for (std::int64_t c = 0; c < channels; ++c) g[c] += dgamma[c];
          }
          if (wants(self, 2)) {
            auto& g = grad_of(self, 2);
            for (std::int64_t c = 0; c < channels; ++c) g[c] += dbeta[c];
          }
        }
        if (!wants(self, 0)) return;
        auto& gx = grad_of(self, 0);
        const double inv_c = 1.0 / static_cast<double>(channels);
        for (std::int64_t b = 0; b < batch; ++b) {
          std::vector<double> m1(static_cast<std::size_t>(length), 0.0), m2(static_cast<std::size_t>(length), 0.0);
          for (std::int64_t c = 0; c < channels; ++c)
            for (std::int64_t t = 0; t < length; ++t) {
              const std::size_t i = static_cast<std::size_t>((b * channels + c) * length + t);
              const double dxhat = static_cast<double>(up[i]) * gd[c];
              m1[t] += dxhat;
              m2[t] += dxhat * xhat[i];
            }
          for (std::int64_t c = 0; c < channels; ++c)
            for (std::int64_t t = 0; t < length; ++t) {
              const std::size_t i = static_cast<std::size_t>((b * channels + c) * length + t);
              const double dxhat = static_cast<double>(up[i]) * gd[c];
              gx[i] += static_cast<Real>(inv_std[b * length + t] *
                                         (dxhat - m1[t] * inv_c - xhat[i] * m2[t] * inv_c));
            }
        }
      });
}

template <typename Real>
Tensor<Real> conv1d(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias,
                    Conv1dOptions opt) {
  require_rank("conv1d", "input", x.shape(), 3);
  require_rank("conv1d", "weight", weight.shape(), 3);
  const std::int64_t cin = x.dim(1);
  if (weight.dim(1) * opt.groups != cin) {
    throw DimensionError("conv1d: input axis 1 (channels) = " + std::to_string(cin) + " but weight expects " +
                         std::to_string(weight.dim(1) * opt.groups));
  }
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(weight.dim(0))) {
    throw DimensionError("conv1d: bias axis 0 = " + std::to_string(bias.numel()) + " but weight axis 0 = " +
                         std::to_string(weight.dim(0)));
  }
  const auto g = kernels::Conv1dGeometry::make(x.dim(0), cin, weight.dim(0), x.dim(2), weight.dim(2), opt.stride,
                                               opt.padding, opt.dilation, opt.groups);
  std::vector<Real> out(static_cast<std::size_t>(g.batch * g.out_channels * g.out_length));
  kconv1d_forward<Real>(g, x.data().data(), weight.data().data(), bias.defined() ? bias.data().data() : nullptr,
                        out.data());
  return make_result<Real>(Shape{g.batch, g.out_channels, g.out_length}, std::move(out), "conv1d", {x, weight, bias},
                           [g](Node<Real>& self) {
                             const Real* w = self.inputs[1]->data.data();
                             if (wants(self, 0)) {
                               kconv1d_backward_input<Real>(g, self.grad.data(), w, grad_of(self, 0).data());
                             }
                             if (wants(self, 1) || wants(self, 2)) {
                               std::vector<Real> scratch;
                               Real* dw = nullptr;
                               if (wants(self, 1)) {
                                 dw = grad_of(self, 1).data();
                               } else {
                                 scratch.assign(self.inputs[1]->data.size(), Real(0));
                                 dw = scratch.data();
                               }
                               Real* db = wants(self, 2) ? grad_of(self, 2).data() : nullptr;
                               kconv1d_backward_weight<Real>(g, self.grad.data(), self.inputs[0]->data.data(), dw, db);
                             }
                           });
}

template <typename Real>
Tensor<Real> conv_transpose1d(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias,
                              std::int64_t stride, std::int64_t padding) {
  require_rank("conv_transpose1d", "input", x.shape(), 3);
  require_rank("conv_transpose1d", "weight", weight.shape(), 3);
  if (weight.dim(0) != x.dim(1)) {
    throw DimensionError("conv_transpose1d: input axis 1 (channels) = " + std::to_string(x.dim(1)) +
                         " but weight axis 0 = " + std::to_string(weight.dim(0)));
  }
  const std::int64_t kernel = weight.dim(2);
  if (kernel < stride) {
    throw DimensionError("conv_transpose1d: kernel " + std::to_string(kernel) + " is smaller than stride " +
                         std::to_string(stride));
  }
  const std::int64_t cout = weight.dim(1);
  const std::int64_t out_len = (x.dim(2) - 1) * stride - 2 * padding + kernel;
  if (out_len <= 0) throw DimensionError("conv_transpose1d: padding leaves no output samples");
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(cout)) {
    throw DimensionError("conv_transpose1d: bias axis 0 = " + std::to_string(bias.numel()) +
                         " but weight axis 1 = " + std::to_string(cout));
  }
  // The adjoint conv1d maps [B, cout, out_len] to [B, cin, T].
  const auto g = kernels::Conv1dGeometry::make(x.dim(0), cout, x.dim(1), out_len, kernel, stride, padding, 1, 1);
  if (g.out_length != x.dim(2)) throw DimensionError("conv_transpose1d: inconsistent geometry");
  std::vector<Real> out(static_cast<std::size_t>(g.batch * cout * out_len), Real(0));
  kconv1d_backward_input<Real>(g, x.data().data(), weight.data().data(), out.data());
  if (bias.defined()) {
    const auto bd = bias.data();
    for (std::int64_t b = 0; b < g.batch; ++b)
      for (std::int64_t o = 0; o < cout; ++o) {
        Real* row = out.data() + (b * cout + o) * out_len;
        for (std::int64_t u = 0; u < out_len; ++u) row[u] += bd[o];
      }
  }
  return make_result<Real>(Shape{g.batch, cout, out_len}, std::move(out), "conv_transpose1d", {x, weight, bias},
                           [g, cout, out_len](Node<Real>& self) {
                             const Real* w = self.inputs[1]->data.data();
                             if (wants(self, 0)) {
                               std::vector<Real> tmp(self.inputs[0]->data.size());
                               kconv1d_forward<Real>(g, self.grad.data(), w, nullptr, tmp.data());
                               auto& gx = grad_of(self, 0);
                               for (std::size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
                             }
                             if (wants(self, 1)) {
                               kconv1d_backward_weight<Real>(g, self.inputs[0]->data.data(), self.grad.data(),
                                                             grad_of(self, 1).data(), nullptr);
                             }
                             if (wants(self, 2)) {
                               auto& gb = grad_of(self, 2);
                               for (std::int64_t b = 0; b < g.batch; ++b)
                                 for (std::int64_t o = 0; o < cout; ++o) {
                                   const Real* row = self.grad.data() + (b * cout + o) * out_len;
                                   Real s = 0;
                                   for (std::int64_t u = 0; u < out_len; ++u) s += row[u];
                                   gb[o] += s;
                                 }
                             }
                           });
}

template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias,
                    Conv2dOptions opt) {
  require_rank("conv2d", "input", x.shape(), 4);
  require_rank("conv2d", "weight", weight.shape(), 4);
  if (weight.dim(1) != x.dim(1)) {
    throw DimensionError("conv2d: input axis 1 (channels) = " + std::to_string(x.dim(1)) +
                         " but weight axis 1 = " + std::to_string(weight.dim(1)));
  }
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(weight.dim(0))) {
    throw DimensionError("conv2d: bias axis 0 = " + std::to_string(bias.numel()) + " but weight axis 0 = " +
                         std::to_string(weight.dim(0)));
  }
  const auto g = kernels::Conv2dGeometry::make(x.dim(0), x.dim(1), weight.dim(0), x.dim(2), x.dim(3), weight.dim(2),
                                               weight.dim(3), opt.stride_h, opt.stride_w, opt.pad_h, opt.pad_w);
  const bool ref = kernels::backend() == kernels::Backend::reference;
  std::vector<Real> out(static_cast<std::size_t>(g.batch * g.out_channels * g.out_h * g.out_w));
  const Real* bptr = bias.defined() ? bias.data().data() : nullptr;
  if (ref) {
    kernels::reference::conv2d_forward(g, x.data().data(), weight.data().data(), bptr, out.data());
  } else {
    kernels::conv2d_forward(g, x.data().data(), weight.data().data(), bptr, out.data());
  }
  return make_result<Real>(Shape{g.batch, g.out_channels, g.out_h, g.out_w}, std::move(out), "conv2d",
                           {x, weight, bias}, [g, ref](Node<Real>& self) {
                             const Real* w = self.inputs[1]->data.data();
                             if (wants(self, 0)) {
                               Real* dx = grad_of(self, 0).data();
                               if (ref) {
                                 kernels::reference::conv2d_backward_input(g, self.grad.data(), w, dx);
                               } else {
                                 kernels::conv2d_backward_input(g, self.grad.data(), w, dx);
                               }
                             }
                             if (wants(self, 1) || wants(self, 2)) {
                               std::vector<Real> scratch;
                               Real* dw = nullptr;
                               if (wants(self, 1)) {
                                 dw = grad_of(self, 1).data();
                               } else {
                                 scratch.assign(self.inputs[1]->data.size(), Real(0));
                                 dw = scratch.data();
                               }
                               Real* db = wants(self, 2) ? grad_of(self, 2).data() : nullptr;
                               const Real* xin = self.inputs[0]->data.data();
                               if (ref) {
                                 kernels::reference::conv2d_backward_weight(g, self.grad.data(), xin, dw, db);
                               } else {
                                 kernels::conv2d_backward_weight(g, self.grad.data(), xin, dw, db);
                               }
                             }
                           });
}

template <typename Real>
Tensor<Real> linear_last(const Tensor<Real>& x, const Tensor<Real>& weight) {
  require_rank("linear_last", "weight", weight.shape(), 2);
  const std::int64_t k = weight.dim(1);
  const std::int64_t m = weight.dim(0);
  if (x.shape().back() != k) {
    throw DimensionError("linear_last: input axis " + std::to_string(x.rank() - 1) + " = " +
                         std::to_string(x.shape().back()) + " but weight axis 1 = " + std::to_string(k));
  }
  const std::int64_t rows = static_cast<std::int64_t>(x.numel()) / k;
  Shape shape = x.shape();
  shape.back() = m;
  std::vector<Real> out(static_cast<std::size_t>(rows * m));
  kernels::gemm<Real>(false, true, rows, m, k, 1, x.data().data(), k, weight.data().data(), k, 0, out.data(), m);
  return make_result<Real>(std::move(shape), std::move(out), "linear_last", {x, weight},
                           [rows, m, k](Node<Real>& self) {
                             if (wants(self, 0)) {
                               kernels::gemm<Real>(false, false, rows, k, m, 1, self.grad.data(), m,
                                                   self.inputs[1]->data.data(), k, 1, grad_of(self, 0).data(), k);
                             }
                             if (wants(self, 1)) {
                               kernels::gemm<Real>(true, false, m, k, rows, 1, self.grad.data(), m,
                                                   self.inputs[0]->data.data(), k, 1, grad_of(self, 1).data(), k);
                             }
                           });
}

template <typename Real>
Tensor<Real> drop_path(const Tensor<Real>& x, std::span<const std::uint8_t> keep, double keep_prob) {
  const std::int64_t batch = x.dim(0);
  if (static_cast<std::int64_t>(keep.size()) != batch) {
    throw DimensionError("drop_path: mask has " + std::to_string(keep.size()) + " entries, input axis 0 = " +
                         std::to_string(batch));
  }
  if (!(keep_prob > 0 && keep_prob <= 1)) throw std::invalid_argument("drop_path: keep_prob must be in (0, 1]");
  const std::int64_t per = static_cast<std::int64_t>(x.numel()) / batch;
  std::vector<Real> factors(static_cast<std::size_t>(batch));
  for (std::int64_t b = 0; b < batch; ++b) factors[b] = keep[b] ? static_cast<Real>(1.0 / keep_prob) : Real(0);
  std::vector<Real> out(x.numel());
  const auto d = x.data();
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t i = 0; i < per; ++i) out[b * per + i] = d[b * per + i] * factors[b];
  return make_result<Real>(x.shape(), std::move(out), "drop_path", {x},
                           [per, factors = std::move(factors)](Node<Real>& self) {
                             auto& g = grad_of(self, 0);
                             for (std::size_t b = 0; b < factors.size(); ++b)
                               for (std::int64_t i = 0; i < per; ++i) g[b * per + i] += self.grad[b * per + i] * factors[b];
                           });
}

#define EVA_INSTANTIATE(Real)                                                                            \
  template Tensor<Real> add(const Tensor<Real>&, const Tensor<Real>&);                                   \
  template Tensor<Real> sub(const Tensor<Real>&, const Tensor<Real>&);                                   \
  template Tensor<Real> mul(const Tensor<Real>&, const Tensor<Real>&);                                   \
  template Tensor<Real> div(const Tensor<Real>&, const Tensor<Real>&);                                   \
  template Tensor<Real> scale(const Tensor<Real>&, double);                                              \
  template Tensor<Real> add_scalar(const Tensor<Real>&, double);                                         \
  template Tensor<Real> add_n(std::span<const Tensor<Real>>);                                            \
  template Tensor<Real> activation(const Tensor<Real>&, Activation);                                     \
  template Tensor<Real> log_clamped(const Tensor<Real>&, double);                                        \
  template Tensor<Real> log(const Tensor<Real>&);                                                        \
  template Tensor<Real> reduce(const Tensor<Real>&, Reduction);                                          \
  template Tensor<Real> l2_norm(const Tensor<Real>&);                                                    \
  template Tensor<Real> reshape(const Tensor<Real>&, Shape);                                             \
  template Tensor<Real> transpose_last2(const Tensor<Real>&);                                            \
  template Tensor<Real> pad_reflect(const Tensor<Real>&, std::int64_t, std::int64_t);                    \
  template Tensor<Real> slice_last(const Tensor<Real>&, std::int64_t, std::int64_t);                     \
  template Tensor<Real> layer_norm_channels(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, \
                                            double);                                                     \
  template Tensor<Real> conv1d(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, Conv1dOptions); \
  template Tensor<Real> conv_transpose1d(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,  \
                                         std::int64_t, std::int64_t);                                    \
  template Tensor<Real> conv2d(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, Conv2dOptions); \
  template Tensor<Real> linear_last(const Tensor<Real>&, const Tensor<Real>&);                           \
  template Tensor<Real> drop_path(const Tensor<Real>&, std::span<const std::uint8_t>, double);

EVA_INSTANTIATE(float)
EVA_INSTANTIATE(double)
#undef EVA_INSTANTIATE

}  // namespace eva
