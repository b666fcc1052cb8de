#include "eva/kernels.hpp"

namespace eva::kernels::reference {

template <typename Real>
void conv1d_forward(const Conv1dGeometry& g, const Real* x, const Real* w, const Real* bias, Real* y) {
  const std::int64_t cin_g = g.in_channels / g.groups;
  const std::int64_t cout_g = g.out_channels / g.groups;
  for (std::int64_t b = 0; b < g.batch; ++b) {
    for (std::int64_t o = 0; o < g.out_channels; ++o) {
      const std::int64_t grp = o / cout_g;
      for (std::int64_t t = 0; t < g.out_length; ++t) {
        Real acc = bias ? bias[o] : Real(0);
        for (std::int64_t i = 0; i < cin_g; ++i) {
          const std::int64_t c = grp * cin_g + i;
          for (std::int64_t k = 0; k < g.kernel; ++k) {
            const std::int64_t pos = t * g.stride + k * g.dilation - g.padding;
            if (pos < 0 || pos >= g.in_length) continue;
            acc += w[(o * cin_g + i) * g.kernel + k] * x[(b * g.in_channels + c) * g.in_length + pos];
          }
        }
        y[(b * g.out_channels + o) * g.out_length + t] = acc;
      }
    }
  }
}

template <typename Real>
void conv1d_backward_input(const Conv1dGeometry& g, const Real* dy, const Real* w, Real* dx) {
  const std::int64_t cin_g = g.in_channels / g.groups;
  const std::int64_t cout_g = g.out_channels / g.groups;
  for (std::int64_t b = 0; b < g.batch; ++b) {
    for (std::int64_t o = 0; o < g.out_channels; ++o) {
      const std::int64_t grp = o / cout_g;
      for (std::int64_t t = 0; t < g.out_length; ++t) {
        const Real d = dy[(b * g.out_channels + o) * g.out_length + t];
        for (std::int64_t i = 0; i < cin_g; ++i) {
          const std::int64_t c = grp * cin_g + i;
          for (std::int64_t k = 0; k < g.kernel; ++k) {
            const std::int64_t pos = t * g.stride + k * g.dilation - g.padding;
            if (pos < 0 || pos >= g.in_length) continue;
            dx[(b * g.in_channels + c) * g.in_length + pos] += w[(o * cin_g + i) * g.kernel + k] * d;
          }
        }
      }
    }
  }
}

template <typename Real>
void conv1d_backward_weight(const Conv1dGeometry& g, const Real* dy, const Real* x, Real* dw, Real* dbias) {
  const std::int64_t cin_g = g.in_channels / g.groups;
  const std::int64_t cout_g = g.out_channels / g.groups;
  for (std::int64_t b = 0; b < g.batch; ++b) {
    for (std::int64_t o = 0; o < g.out_channels; ++o) {
      const std::int64_t grp = o / cout_g;
      for (std::int64_t t = 0; t < g.out_length; ++t) {
        const Real d = dy[(b * g.out_channels + o) * g.out_length + t];
        if (dbias) dbias[o] += d;
        for (std::int64_t i = 0; i < cin_g; ++i) {
          const std::int64_t c = grp * cin_g + i;
          for (std::int64_t k = 0; k < g.kernel; ++k) {
            const std::int64_t pos = t * g.stride + k * g.dilation - g.padding;
            if (pos < 0 || pos >= g.in_length) continue;
            dw[(o * cin_g + i) * g.kernel + k] += d * x[(b * g.in_channels + c) * g.in_length + pos];
          }
        }
      }
    }
  }
}

template <typename Real>
void conv_transpose1d_forward(std::int64_t batch, std::int64_t in_channels, std::int64_t out_channels,
                              std::int64_t in_length, std::int64_t kernel, std::int64_t stride,
                              std::int64_t padding, const Real* x, const Real* w, const Real* bias, Real* y) {
  const std::int64_t out_length = (in_length - 1) * stride - 2 * padding + kernel;
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t o = 0; o < out_channels; ++o) {
      for (std::int64_t u = 0; u < out_length; ++u) {
        y[(b * out_channels + o) * out_length + u] = bias ? bias[o] : Real(0);
      }
    }
    for (std::int64_t i = 0; i < in_channels; ++i) {
      for (std::int64_t t = 0; t < in_length; ++t) {
        const Real v = x[(b * in_channels + i) * in_length + t];
        for (std::int64_t o = 0; o < out_channels; ++o) {
          for (std::int64_t k = 0; k < kernel; ++k) {
            const std::int64_t u = t * stride + k - padding;
            if (u < 0 || u >= out_length) continue;
            y[(b * out_channels + o) * out_length + u] += v * w[(i * out_channels + o) * kernel + k];
          }
        }
      }
    }
  }
}

template <typename Real>
void conv2d_forward(const Conv2dGeometry& g, const Real* x, const Real* w, const Real* bias, Real* y) {
  for (std::int64_t b = 0; b < g.batch; ++b) {
    for (std::int64_t o = 0; o < g.out_channels; ++o) {
      for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
        for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
          Real acc = bias ? bias[o] : Real(0);
          for (std::int64_t i = 0; i < g.in_channels; ++i) {
            for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
              const std::int64_t h = oh * g.stride_h + kh - g.pad_h;
              if (h < 0 || h >= g.in_h) continue;
              for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
                const std::int64_t ww = ow * g.stride_w + kw - g.pad_w;
                if (ww < 0 || ww >= g.in_w) continue;
                acc += w[((o * g.in_channels + i) * g.kernel_h + kh) * g.kernel_w + kw] *
                       x[((b * g.in_channels + i) * g.in_h + h) * g.in_w + ww];
              }
            }
          }
          y[((b * g.out_channels + o) * g.out_h + oh) * g.out_w + ow] = acc;
        }
      }
    }
  }
}

template <typename Real>
void conv2d_backward_input(const Conv2dGeometry& g, const Real* dy, const Real* w, Real* dx) {
  for (std::int64_t b = 0; b < g.batch; ++b) {
    for (std::int64_t o = 0; o < g.out_channels; ++o) {
      for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
        for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
          const Real d = dy[((b * g.out_channels + o) * g.out_h + oh) * g.out_w + ow];
          for (std::int64_t i = 0; i < g.in_channels; ++i) {
            for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
              const std::int64_t h = oh * g.stride_h + kh - g.pad_h;
              if (h < 0 || h >= g.in_h) continue;
              for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
                const std::int64_t ww = ow * g.stride_w + kw - g.pad_w;
                if (ww < 0 || ww >= g.in_w) continue;
                dx[((b * g.in_channels + i) * g.in_h + h) * g.in_w + ww] +=
                    d * w[((o * g.in_channels + i) * g.kernel_h + kh) * g.kernel_w + kw];
              }
            }
          }
        }
      }
    }
  }
}

template <typename Real>
void conv2d_backward_weight(const Conv2dGeometry& g, const Real* dy, const Real* x, Real* dw, Real* dbias) {
  for (std::int64_t b = 0; b < g.batch; ++b) {
    for (std::int64_t o = 0; o < g.out_channels; ++o) {
      for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
        for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
          const Real d = dy[((b * g.out_channels + o) * g.out_h + oh) * g.out_w + ow];
          if (dbias) dbias[o] += d;
          for (std::int64_t i = 0; i < g.in_channels; ++i) {
            for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
              const std::int64_t h = oh * g.stride_h + kh - g.pad_h;
              if (h < 0 || h >= g.in_h) continue;
              for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
                const std::int64_t ww = ow * g.stride_w + kw - g.pad_w;
                if (ww < 0 || ww >= g.in_w) continue;
                dw[((o * g.in_channels + i) * g.kernel_h + kh) * g.kernel_w + kw] +=
                    d * x[((b * g.in_channels + i) * g.in_h + h) * g.in_w + ww];
              }
            }
          }
        }
      }
    }
  }
}

#define EVA_INSTANTIATE(Real)                                                                          \
  template void conv1d_forward(const Conv1dGeometry&, const Real*, const Real*, const Real*, Real*);   \
  template void conv1d_backward_input(const Conv1dGeometry&, const Real*, const Real*, Real*);         \
  template void conv1d_backward_weight(const Conv1dGeometry&, const Real*, const Real*, Real*, Real*); \
  template void conv_transpose1d_forward(std::int64_t, std::int64_t, std::int64_t, std::int64_t,       \
                                         std::int64_t, std::int64_t, std::int64_t, const Real*,        \
                                         const Real*, const Real*, Real*);                             \
  template void conv2d_forward(const Conv2dGeometry&, const Real*, const Real*, const Real*, Real*);   \
  template void conv2d_backward_input(const Conv2dGeometry&, const Real*, const Real*, Real*);         \
  template void conv2d_backward_weight(const Conv2dGeometry&, const Real*, const Real*, Real*, Real*);

EVA_INSTANTIATE(float)
EVA_INSTANTIATE(double)
#undef EVA_INSTANTIATE

}  // namespace eva::kernels::reference
