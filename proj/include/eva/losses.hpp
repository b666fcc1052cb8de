#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "eva/discriminators.hpp"
#include "eva/signal.hpp"
#include "eva/tensor.hpp"

namespace eva {

using Resolution = std::array<int, 3>;  // n_fft, hop, win

/// Mean |log-mel(x) - log-mel(g)|. x and g are [B, 1, L] or [B, L].
template <typename Real>
Tensor<Real> mel_loss(const Tensor<Real>& x, const Tensor<Real>& g, const MelFrontend<Real>& frontend);

/// Mean over sub-discriminators of mean((logit - 1)^2).
template <typename Real>
Tensor<Real> adv_loss_g(const DiscriminatorOutput<Real>& fake);

/// Per sub-discriminator: sum over layers of mean |real - fake|; averaged over
/// sub-discriminators. Real features are treated as constants.
template <typename Real>
Tensor<Real> fm_loss(const DiscriminatorOutput<Real>& real, const DiscriminatorOutput<Real>& fake);

/// Mean over sub-discriminators of mean((real - 1)^2) + mean(fake^2).
template <typename Real>
Tensor<Real> adv_loss_d(const DiscriminatorOutput<Real>& real, const DiscriminatorOutput<Real>& fake);

/// Mean over resolutions of spectral convergence ||X| - |G||_F / ||X||_F plus
/// mean |log|X| - log|G||, magnitudes floored at 1e-7 inside the log.
template <typename Real>
Tensor<Real> msstft_loss(const Tensor<Real>& x, const Tensor<Real>& g, const std::vector<Resolution>& resolutions);

struct LossReport {
  std::int64_t step = 0;
  double mel = 0, adv_g = 0, fm = 0, msstft = 0, adv_d = 0;
  double lr = 0;
  double grad_scale_g = 1, grad_scale_d = 1;
  std::map<std::string, double> adv_g_per_sub;
  std::map<std::string, double> adv_d_per_sub;
  std::map<std::string, double> balancer_norms;

  /// One JSON object on a single line.
  std::string to_json_line() const;
  bool all_finite() const;
};

/// Per-sub-discriminator loss values for logging.
template <typename Real>
std::map<std::string, double> adv_g_breakdown(const DiscriminatorOutput<Real>& fake);
template <typename Real>
std::map<std::string, double> adv_d_breakdown(const DiscriminatorOutput<Real>& real,
                                              const DiscriminatorOutput<Real>& fake);

}  // namespace eva
