#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "eva/parameters.hpp"
#include "eva/tensor.hpp"

namespace eva {

struct DiscriminatorConfig {
  std::vector<int> mpd_periods = {3, 5, 7, 11, 17, 23, 37};
  /// [n_fft, hop, win] per resolution.
  std::vector<std::array<int, 3>> mrd_resolutions = {
      {2048, 512, 2048}, {1024, 120, 600}, {2048, 240, 1200}, {4096, 480, 2400}, {512, 50, 240}};
  int base_channels = 4;
  int max_channels = 128;
  bool use_silu = false;
  double leaky_slope = 0.1;

  void validate() const;
  int max_window() const;
  bool operator==(const DiscriminatorConfig&) const = default;

  /// Full-width schedule (base 32, cap 1024).
  static DiscriminatorConfig full();
  /// Channel schedule shrunk 8x; periods and resolutions unchanged.
  static DiscriminatorConfig desk();
};

/// Per sub-discriminator logits and ordered intermediate features
/// (outermost first; the logit map is the last feature).
template <typename Real>
struct DiscriminatorOutput {
  std::vector<std::string> names;
  std::vector<Tensor<Real>> logits;
  std::vector<std::vector<Tensor<Real>>> features;

  std::size_t size() const { return logits.size(); }
  void append(DiscriminatorOutput&& other);
};

template <typename Real>
class Discriminators {
 public:
  Discriminators(DiscriminatorConfig config, std::uint64_t seed);

  const DiscriminatorConfig& config() const { return config_; }
  ParameterSet<Real>& parameters() { return params_; }
  const ParameterSet<Real>& parameters() const { return params_; }

  /// audio [B, 1, L]; MPD sub-discriminators first, then MRD.
  DiscriminatorOutput<Real> forward(const Tensor<Real>& audio) const;
  DiscriminatorOutput<Real> mpd_forward(const Tensor<Real>& audio) const;
  DiscriminatorOutput<Real> mrd_forward(const Tensor<Real>& audio) const;

  /// MPD channel schedule: base * {1, 4, 16, 32, 32} capped at max.
  std::vector<int> mpd_channels() const;
  int mrd_channels() const;

 private:
  Tensor<Real> act(const Tensor<Real>& x) const;

  DiscriminatorConfig config_;
  ParameterSet<Real> params_;
};

}  // namespace eva
