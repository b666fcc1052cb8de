#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "eva/tensor.hpp"

namespace eva {

struct AudioBuffer {
  int sample_rate = 0;
  std::vector<float> samples;

  /// Throws std::invalid_argument on a non-positive rate, empty samples or
  /// any |sample| > 4.
  void validate() const;
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

enum class MelScale { htk, slaney };

struct SpectralConfig {
  int sample_rate = 44100;
  int n_fft = 2048;
  int hop_length = 512;
  int win_length = 2048;
  int mel_bins = 160;
  double fmin = 0.0;
  double fmax = 0.0;  // 0 means sample_rate / 2
  double log_floor = 1e-5;
  MelScale scale = MelScale::htk;

  double effective_fmax() const { return fmax > 0 ? fmax : sample_rate / 2.0; }
  void validate() const;
  bool operator==(const SpectralConfig&) const = default;

  static SpectralConfig full_44k();
  static SpectralConfig tiny_8k();
};

/// Log-mel features, row-major frames x mel_bins.
struct MelSpec {
  SpectralConfig config;
  std::int64_t frames = 0;
  std::vector<float> values;

  float at(std::int64_t frame, int bin) const { return values[frame * config.mel_bins + bin]; }
  /// As a [1, mel_bins, frames] tensor (generator layout).
  template <typename Real>
  Tensor<Real> to_tensor() const;
};

/// Periodic Hann window of length n (n >= 2).
template <typename Real>
Tensor<Real> hann_window(std::int64_t n);

/// Analysis window of n_fft taps: Hann(win) zero-padded to the centre.
std::vector<double> analysis_window(int n_fft, int win_length);

/// Number of frames for a signal of `padded_length` samples.
std::int64_t frame_count(std::int64_t padded_length, int n_fft, int hop);

/// |STFT| of audio [B, L] or [L]. With center=true the signal is reflect
/// padded by n_fft/2 on both sides first. Result is [B, frames, n_fft/2+1]
/// (or [frames, n_fft/2+1] for rank-1 input). Differentiable.
template <typename Real>
Tensor<Real> stft_magnitude(const Tensor<Real>& audio, int n_fft, int hop, int win, bool center = true);

/// Complex STFT (test oracle and metrics), frames x (n_fft/2+1), centred.
struct ComplexSpectrogram {
  int n_fft = 0, hop = 0, win = 0;
  std::int64_t frames = 0;
  std::int64_t signal_length = 0;
  std::vector<std::complex<double>> bins;
};
ComplexSpectrogram stft_complex(const std::vector<double>& signal, int n_fft, int hop, int win);
/// Weighted overlap-add inverse of stft_complex.
std::vector<double> istft(const ComplexSpectrogram& spec);

/// Triangular mel filters [mel_bins, n_fft/2+1] with area normalization.
template <typename Real>
Tensor<Real> mel_filterbank(const SpectralConfig& config);

double hz_to_mel(double hz, MelScale scale);
double mel_to_hz(double mel, MelScale scale);

/// Differentiable log-mel front end.
/// Audio [B, L] is reflect padded by (n_fft - hop)/2 per side, so an input of
/// L = k * hop samples yields exactly k frames. Output [B, mel_bins, frames].
template <typename Real>
class MelFrontend {
 public:
  explicit MelFrontend(SpectralConfig config);
  Tensor<Real> operator()(const Tensor<Real>& audio) const;
  const SpectralConfig& config() const { return config_; }
  const Tensor<Real>& filterbank() const { return filterbank_; }
  std::int64_t frames_for(std::int64_t samples) const;

 private:
  SpectralConfig config_;
  Tensor<Real> filterbank_;
};

/// Non-differentiable convenience wrapper; rate mismatch throws.
MelSpec mel_spectrogram(const AudioBuffer& audio, const SpectralConfig& config);

/// "EVAM" container.
void write_mel(const std::string& path, const MelSpec& mel);
MelSpec read_mel(const std::string& path);

}  // namespace eva
