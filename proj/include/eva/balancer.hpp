#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "eva/tensor.hpp"

namespace eva {

struct BalancerConfig {
  std::vector<std::string> names = {"mel", "adv_g", "fm", "msstft"};
  std::vector<double> weights = {1, 1, 1, 1};
  double reference_norm = 1.0;
  double ema_decay = 0.999;  // in [0, 1); 0 uses the instantaneous norms
  double epsilon = 1e-12;
  int dead_loss_steps = 100;

  void validate() const;
};

struct BalancerState {
  std::int64_t step = 0;
  std::vector<double> ema;           // raw (not bias corrected)
  std::vector<double> last_norm;     // ||g_i|| at the latest step
  std::vector<double> realized;      // ||balanced g_i|| at the latest step
  std::vector<std::int64_t> dead_streak;
};

/// Rescales per-loss gradients at a shared output tensor so each loss
/// contributes reference_norm * weight_i / sum(weights) of the update.
template <typename Real>
class Balancer {
 public:
  explicit Balancer(BalancerConfig config);

  /// `output` must be a leaf with requires_grad that every loss depends on.
  /// Returns the gradient to inject at the output (same size). Each loss is
  /// backpropagated to `output` only.
  std::vector<Real> balance(std::span<const Tensor<Real>> losses, const Tensor<Real>& output);

  /// Same, from precomputed per-loss gradients at the output.
  std::vector<Real> combine(const std::vector<std::vector<Real>>& grads);

  /// weight_i / sum(weights) and the last realized norms, by loss name.
  std::map<std::string, double> shares() const;
  std::map<std::string, double> realized_norms() const;

  const BalancerConfig& config() const { return config_; }
  const BalancerState& state() const { return state_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  nlohmann::json to_json() const;
  void load_json(const nlohmann::json& j);

 private:
  BalancerConfig config_;
  BalancerState state_;
  std::vector<std::string> warnings_;
  std::vector<bool> warned_;
};

}  // namespace eva
