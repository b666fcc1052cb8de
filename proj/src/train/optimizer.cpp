#include <cmath>
#include <stdexcept>

#include "eva/train.hpp"

namespace eva {

template <typename Real>
void adamw_step(std::span<Real> param, std::span<const Real> grad, std::span<Real> m, std::span<Real> v,
                std::int64_t step, const AdamWConfig& cfg) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw DimensionError("adamw_step: buffer sizes differ");
  }
  if (step < 1) throw std::invalid_argument("adamw_step: step is 1-based");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  const Real b1 = static_cast<Real>(cfg.beta1), b2 = static_cast<Real>(cfg.beta2);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const Real g = grad[i];
    m[i] = b1 * m[i] + (Real(1) - b1) * g;
    v[i] = b2 * v[i] + (Real(1) - b2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    param[i] = static_cast<Real>(param[i] * decay - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

template <typename Real>
AdamW<Real>::AdamW(std::vector<NamedParameter<Real>> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), Real(0));
    v_.emplace_back(p.tensor.numel(), Real(0));
  }
}

template <typename Real>
void AdamW<Real>::step() {
  ++steps_;
  std::vector<Real> zeros;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<Real> t = params_[i].tensor;
    std::span<const Real> g;
    if (t.has_grad()) {
      g = std::as_const(t).grad();
    } else {
      zeros.assign(t.numel(), Real(0));
      g = zeros;
    }
    adamw_step<Real>(t.data(), g, m_[i], v_[i], steps_, config_);
  }
}

double lr_at(std::int64_t step, const TrainConfig& cfg) {
  return cfg.lr0 * std::pow(cfg.lr_decay_per_step, static_cast<double>(step));
}

template void adamw_step<float>(std::span<float>, std::span<const float>, std::span<float>, std::span<float>,
                                std::int64_t, const AdamWConfig&);
template void adamw_step<double>(std::span<double>, std::span<const double>, std::span<double>, std::span<double>,
                                 std::int64_t, const AdamWConfig&);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace eva
