#include "eva/balancer.hpp"

#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "eva/autograd.hpp"

namespace eva {

void BalancerConfig::validate() const {
  if (names.empty()) throw std::invalid_argument("balancer: no losses");
  if (names.size() != weights.size()) throw std::invalid_argument("balancer: one weight per loss required");
  double total = 0;
  for (double w : weights) {
    if (!(w > 0)) throw std::invalid_argument("balancer: weights must be positive");
    total += w;
  }
  if (!(total > 0)) throw std::invalid_argument("balancer: weights sum to zero");
  if (!(reference_norm > 0)) throw std::invalid_argument("balancer: reference_norm must be positive");
  if (!(ema_decay >= 0 && ema_decay < 1)) throw std::invalid_argument("balancer: ema_decay must be in [0, 1)");
  if (!(epsilon > 0)) throw std::invalid_argument("balancer: epsilon must be positive");
}

template <typename Real>
Balancer<Real>::Balancer(BalancerConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t n = config_.names.size();
  state_.ema.assign(n, 0.0);
  state_.last_norm.assign(n, 0.0);
  state_.realized.assign(n, 0.0);
  state_.dead_streak.assign(n, 0);
  warned_.assign(n, false);
}

template <typename Real>
std::vector<Real> Balancer<Real>::balance(std::span<const Tensor<Real>> losses, const Tensor<Real>& output) {
  if (losses.size() != config_.names.size()) {
    throw std::invalid_argument("balancer: expected " + std::to_string(config_.names.size()) + " losses, got " +
                                std::to_string(losses.size()));
  }
  if (!output.is_leaf() || !output.requires_grad()) {
    throw std::invalid_argument("balancer: output must be a leaf that requires grad");
  }
  std::vector<std::vector<Real>> grads;
  grads.reserve(losses.size());
  Tensor<Real> target = output;
  for (const auto& loss : losses) {
    target.zero_grad();
    backward(loss, std::span<const Tensor<Real>>(&target, 1));
    if (target.has_grad()) {
      grads.emplace_back(target.grad().begin(), target.grad().end());
    } else {
      grads.emplace_back(output.numel(), Real(0));
    }
  }
  target.zero_grad();
  return combine(grads);
}

template <typename Real>
std::vector<Real> Balancer<Real>::combine(const std::vector<std::vector<Real>>& grads) {
  const std::size_t n = config_.names.size();
  if (grads.size() != n) throw std::invalid_argument("balancer: gradient count mismatch");
  const std::size_t size = grads[0].size();
  const double total_weight = std::accumulate(config_.weights.begin(), config_.weights.end(), 0.0);
  const double beta = config_.ema_decay;
  ++state_.step;
  const double correction = 1.0 - std::pow(beta, static_cast<double>(state_.step));
  std::vector<double> injected(size, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (grads[i].size() != size) throw std::invalid_argument("balancer: gradient sizes differ");
    double sq = 0;
    for (Real v : grads[i]) sq += static_cast<double>(v) * v;
    const double norm = std::sqrt(sq);
    state_.last_norm[i] = norm;
    state_.ema[i] = beta * state_.ema[i] + (1.0 - beta) * norm;
    const double ema = state_.ema[i] / correction;
    const double factor = config_.reference_norm * (config_.weights[i] / total_weight) / (ema + config_.epsilon);
    for (std::size_t k = 0; k < size; ++k) injected[k] += factor * grads[i][k];
    state_.realized[i] = factor * norm;
    if (norm < config_.epsilon) {
      if (++state_.dead_streak[i] > config_.dead_loss_steps && !warned_[i]) {
        warned_[i] = true;
        const std::string msg = "balancer: loss '" + config_.names[i] + "' has had a vanishing gradient for " +
                                std::to_string(state_.dead_streak[i]) + " steps";
        warnings_.push_back(msg);
        std::cerr << "warning: " << msg << "\n";
      }
    } else {
      state_.dead_streak[i] = 0;
      warned_[i] = false;
    }
  }
  return std::vector<Real>(injected.begin(), injected.end());
}

template <typename Real>
std::map<std::string, double> Balancer<Real>::shares() const {
  const double total = std::accumulate(config_.weights.begin(), config_.weights.end(), 0.0);
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < config_.names.size(); ++i) out[config_.names[i]] = config_.weights[i] / total;
  return out;
}

template <typename Real>
std::map<std::string, double> Balancer<Real>::realized_norms() const {
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < config_.names.size(); ++i) out[config_.names[i]] = state_.realized[i];
  return out;
}

template <typename Real>
nlohmann::json Balancer<Real>::to_json() const {
  return {{"names", config_.names},         {"weights", config_.weights},
          {"reference_norm", config_.reference_norm},
          {"ema_decay", config_.ema_decay}, {"epsilon", config_.epsilon},
          {"step", state_.step},            {"ema", state_.ema},
          {"last_norm", state_.last_norm},  {"realized", state_.realized},
          {"dead_streak", state_.dead_streak}};
}

template <typename Real>
void Balancer<Real>::load_json(const nlohmann::json& j) {
  if (j.at("names").get<std::vector<std::string>>() != config_.names) {
    throw std::invalid_argument("balancer state: loss names differ from the configuration");
  }
  state_.step = j.at("step").get<std::int64_t>();
  state_.ema = j.at("ema").get<std::vector<double>>();
  state_.last_norm = j.at("last_norm").get<std::vector<double>>();
  state_.realized = j.at("realized").get<std::vector<double>>();
  state_.dead_streak = j.at("dead_streak").get<std::vector<std::int64_t>>();
  if (state_.ema.size() != config_.names.size()) throw std::invalid_argument("balancer state: size mismatch");
}

template class Balancer<float>;
template class Balancer<double>;

}  // namespace eva
