#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "eva/parameters.hpp"
#include "eva/signal.hpp"
#include "eva/tensor.hpp"

namespace eva {

struct GeneratorConfig {
  int mel_bins = 160;
  std::vector<int> cam_depths;  // empty: no context module
  std::vector<int> cam_dims;
  int cam_kernel = 7;
  double cam_drop_path = 0.0;
  std::vector<int> upsample_rates;
  std::vector<int> upsample_kernels;
  int initial_channels = 512;
  std::vector<int> mrf_kernels;
  std::vector<std::vector<int>> mrf_dilations;
  bool output_tanh = true;

  bool has_cam() const { return !cam_depths.empty(); }
  std::int64_t upsample_factor() const;
  /// Throws std::invalid_argument describing the first inconsistency.
  void validate() const;
  bool operator==(const GeneratorConfig&) const = default;

  static GeneratorConfig hifigan_base_44k();
  static GeneratorConfig evagan_base();
  static GeneratorConfig evagan_big();
  static GeneratorConfig evagan_tiny();
  /// Looks up one of the names above ("hifigan-base-44k", ...).
  static GeneratorConfig preset(const std::string& name);
};

struct ParameterBreakdown {
  std::int64_t cam = 0;
  std::int64_t upsampler = 0;
  std::int64_t total() const { return cam + upsampler; }
};

/// Closed form, without building tensors. Per conv: Cin/groups * Cout * K
/// weights plus Cout biases; per channel layer norm: 2C.
///   cam       = stem + stem norm + blocks + transitions + final norm
///     block(C)      = (K C + C) + 2C + (4C^2 + 4C) + (4C^2 + C)
///     transition    = 2A + (A*B + B)
///   upsampler = bridge conv + per level (transposed conv + MRF) + output conv
///     MRF(C) per kernel k with dilations D = 2|D| (C^2 k + C)
ParameterBreakdown count_parameters(const GeneratorConfig& config);

/// Multiply-add FLOPs (2 per MAC) per input mel frame.
struct FlopBreakdown {
  double cam = 0;
  double upsampler = 0;
};
FlopBreakdown count_flops_per_frame(const GeneratorConfig& config);

template <typename Real>
class Generator {
 public:
  Generator(GeneratorConfig config, std::uint64_t seed);

  const GeneratorConfig& config() const { return config_; }
  ParameterSet<Real>& parameters() { return params_; }
  const ParameterSet<Real>& parameters() const { return params_; }
  ParameterBreakdown breakdown() const;

  /// mel [B, mel_bins, T] -> audio [B, 1, T * upsample_factor].
  /// drop_rng is required when training with a non-zero drop path rate.
  Tensor<Real> forward(const Tensor<Real>& mel, bool training = false, std::mt19937_64* drop_rng = nullptr) const;

  /// mel [B, mel_bins, T] -> [B, cam_dims.back(), T]. Identity when no CAM.
  Tensor<Real> cam_forward(const Tensor<Real>& mel, bool training = false,
                           std::mt19937_64* drop_rng = nullptr) const;

  /// Mean of the level's parallel residual blocks; shape preserved.
  Tensor<Real> mrf_forward(std::size_t level, const Tensor<Real>& x) const;
  /// A single residual block of a level.
  Tensor<Real> resblock_forward(std::size_t level, std::size_t block, const Tensor<Real>& x) const;

  /// Channels entering MRF at a level.
  int level_channels(std::size_t level) const;

 private:
  Tensor<Real> p(const std::string& name) const { return params_.get(name); }

  GeneratorConfig config_;
  ParameterSet<Real> params_;
  std::vector<double> block_drop_rates_;
};

/// Inference convenience: MelSpec -> waveform. The spectral config's hop must
/// equal the generator's upsampling factor.
template <typename Real>
AudioBuffer generate(const Generator<Real>& model, const MelSpec& mel);

}  // namespace eva
