#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "eva/ops.hpp"
#include "eva/signal.hpp"
#include "fft.hpp"

namespace eva {

void AudioBuffer::validate() const {
  if (sample_rate <= 0) throw std::invalid_argument("audio: sample rate must be positive");
  if (samples.empty()) throw std::invalid_argument("audio: no samples");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!(std::abs(samples[i]) <= 4.0f)) {
      throw std::invalid_argument("audio: sample " + std::to_string(i) + " out of range");
    }
  }
}

void SpectralConfig::validate() const {
  if (sample_rate <= 0) throw std::invalid_argument("spectral config: sample_rate must be positive");
  if (n_fft < 2 || win_length < 2) throw std::invalid_argument("spectral config: n_fft and win_length must be >= 2");
  if (win_length > n_fft) throw std::invalid_argument("spectral config: win_length > n_fft");
  if (hop_length < 1 || hop_length > win_length) throw std::invalid_argument("spectral config: bad hop_length");
  if (mel_bins < 1) throw std::invalid_argument("spectral config: mel_bins must be >= 1");
  if (!(fmin >= 0 && fmin < effective_fmax() && effective_fmax() <= sample_rate / 2.0)) {
    throw std::invalid_argument("spectral config: need 0 <= fmin < fmax <= sample_rate/2");
  }
  if (!(log_floor > 0)) throw std::invalid_argument("spectral config: log_floor must be positive");
}

SpectralConfig SpectralConfig::full_44k() { return SpectralConfig{}; }

SpectralConfig SpectralConfig::tiny_8k() {
  SpectralConfig c;
  c.sample_rate = 8000;
  c.n_fft = 256;
  c.hop_length = 64;
  c.win_length = 256;
  c.mel_bins = 32;
  return c;
}

template <typename Real>
Tensor<Real> MelSpec::to_tensor() const {
  const int bins = config.mel_bins;
  Tensor<Real> t(Shape{1, bins, frames});
  auto d = t.data();
  for (std::int64_t f = 0; f < frames; ++f)
    for (int m = 0; m < bins; ++m) d[m * frames + f] = static_cast<Real>(values[f * bins + m]);
  return t;
}

template <typename Real>
Tensor<Real> hann_window(std::int64_t n) {
  if (n < 2) throw std::invalid_argument("hann_window: n must be >= 2");
  Tensor<Real> w(Shape{n});
  auto d = w.data();
  for (std::int64_t k = 0; k < n; ++k) {
    d[k] = static_cast<Real>(0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / n)));
  }
  return w;
}

std::vector<double> analysis_window(int n_fft, int win_length) {
  if (win_length > n_fft) throw std::invalid_argument("analysis_window: win_length > n_fft");
  std::vector<double> w(static_cast<std::size_t>(n_fft), 0.0);
  const auto hann = hann_window<double>(win_length);
  const int offset = (n_fft - win_length) / 2;
  for (int k = 0; k < win_length; ++k) w[offset + k] = hann[k];
  return w;
}

std::int64_t frame_count(std::int64_t padded_length, int n_fft, int hop) {
  if (padded_length < n_fft) return 0;
  return 1 + (padded_length - n_fft) / hop;
}

namespace {

// |rfft(window * frame)| for frames of an already padded signal [rows, L].
template <typename Real>
Tensor<Real> framed_magnitude(const Tensor<Real>& padded, int n_fft, int hop, int win) {
  const std::int64_t len = padded.shape().back();
  const std::int64_t rows = static_cast<std::int64_t>(padded.numel()) / len;
  const std::int64_t frames = frame_count(len, n_fft, hop);
  if (frames < 1) {
    throw DimensionError("stft: signal of " + std::to_string(len) + " samples is shorter than n_fft " +
                         std::to_string(n_fft));
  }
  const int nbins = n_fft / 2 + 1;
  const auto wd = analysis_window(n_fft, win);
  std::vector<Real> window(wd.begin(), wd.end());
  std::vector<Real> mag(static_cast<std::size_t>(rows * frames * nbins));
  // Unit phasors kept for the backward pass.
  std::vector<std::complex<Real>> phase(mag.size());
  const Real* x = padded.data().data();
  const std::int64_t jobs = rows * frames;
#pragma omp parallel
  {
    std::vector<Real> buf(static_cast<std::size_t>(n_fft));
    std::vector<std::complex<Real>> spec(static_cast<std::size_t>(nbins));
#pragma omp for schedule(static)
    for (std::int64_t j = 0; j < jobs; ++j) {
      const std::int64_t r = j / frames, f = j % frames;
      const Real* src = x + r * len + f * hop;
      for (int n = 0; n < n_fft; ++n) buf[n] = src[n] * window[n];
      fft::rfft<Real>(n_fft, buf.data(), spec.data());
      for (int k = 0; k < nbins; ++k) {
        const Real m = std::abs(spec[k]);
        mag[j * nbins + k] = m;
        phase[j * nbins + k] = m > 0 ? spec[k] / m : std::complex<Real>(0);
      }
    }
  }
  Shape shape = padded.shape();
  shape.back() = frames;
  shape.push_back(nbins);
  return detail::make_result<Real>(
      std::move(shape), std::move(mag), "stft_magnitude", {padded},
      [=, window = std::move(window), phase = std::move(phase)](detail::Node<Real>& self) {
        auto& in = *self.inputs[0];
        in.ensure_grad();
        Real* dx = in.grad.data();
        std::vector<Real> buf(static_cast<std::size_t>(n_fft));
        std::vector<std::complex<Real>> spec(static_cast<std::size_t>(nbins));
        // Overlapping frames write to shared samples: serial over frames.
        for (std::int64_t j = 0; j < jobs; ++j) {
          const std::int64_t r = j / frames, f = j % frames;
          for (int k = 0; k < nbins; ++k) {
            const Real c = self.grad[j * nbins + k];
            const bool edge = k == 0 || 2 * k == n_fft;
            spec[k] = phase[j * nbins + k] * (edge ? c : c / Real(2));
          }
          fft::irfft<Real>(n_fft, spec.data(), buf.data());
          Real* dst = dx + r * len + f * hop;
          for (int n = 0; n < n_fft; ++n) dst[n] += buf[n] * window[n];
        }
      });
}

}  // namespace

template <typename Real>
Tensor<Real> stft_magnitude(const Tensor<Real>& audio, int n_fft, int hop, int win, bool center) {
  if (win > n_fft || hop < 1 || n_fft < 2) throw std::invalid_argument("stft_magnitude: bad geometry");
  if (audio.rank() < 1 || audio.rank() > 2) {
    throw DimensionError("stft_magnitude: audio must be [L] or [B, L], got " + shape_string(audio.shape()));
  }
  const std::int64_t len = audio.shape().back();
  if (len < win) {
    throw DimensionError("stft_magnitude: audio length " + std::to_string(len) + " shorter than window " +
                         std::to_string(win));
  }
  if (!center) return framed_magnitude(audio, n_fft, hop, win);
  const std::int64_t pad = n_fft / 2;
  if (pad >= len) {
    throw DimensionError("stft_magnitude: audio length " + std::to_string(len) + " too short to reflect pad " +
                         std::to_string(pad));
  }
  return framed_magnitude(pad_reflect(audio, pad, pad), n_fft, hop, win);
}

ComplexSpectrogram stft_complex(const std::vector<double>& signal, int n_fft, int hop, int win) {
  const std::int64_t len = static_cast<std::int64_t>(signal.size());
  const int pad = n_fft / 2;
  if (len <= pad) throw DimensionError("stft_complex: signal too short for centre padding");
  Tensor<double> x(Shape{len}, signal);
  std::vector<double> padded;
  {
    NoGradGuard guard;
    auto p = pad_reflect(x, pad, pad);
    padded.assign(p.data().begin(), p.data().end());
  }
  ComplexSpectrogram out;
  out.n_fft = n_fft;
  out.hop = hop;
  out.win = win;
  out.signal_length = len;
  out.frames = frame_count(static_cast<std::int64_t>(padded.size()), n_fft, hop);
  const int nbins = n_fft / 2 + 1;
  out.bins.resize(static_cast<std::size_t>(out.frames * nbins));
  const auto window = analysis_window(n_fft, win);
  std::vector<double> buf(static_cast<std::size_t>(n_fft));
  for (std::int64_t f = 0; f < out.frames; ++f) {
    for (int n = 0; n < n_fft; ++n) buf[n] = padded[f * hop + n] * window[n];
    fft::rfft<double>(n_fft, buf.data(), out.bins.data() + f * nbins);
  }
  return out;
}

std::vector<double> istft(const ComplexSpectrogram& spec) {
  const int n_fft = spec.n_fft;
  const int nbins = n_fft / 2 + 1;
  const auto window = analysis_window(n_fft, spec.win);
  const std::int64_t padded_len = (spec.frames - 1) * spec.hop + n_fft;
  std::vector<double> acc(static_cast<std::size_t>(padded_len), 0.0), env(acc.size(), 0.0);
  std::vector<double> buf(static_cast<std::size_t>(n_fft));
  for (std::int64_t f = 0; f < spec.frames; ++f) {
    fft::irfft<double>(n_fft, spec.bins.data() + f * nbins, buf.data());
    for (int n = 0; n < n_fft; ++n) {
      acc[f * spec.hop + n] += buf[n] / n_fft * window[n];
      env[f * spec.hop + n] += window[n] * window[n];
    }
  }
  const std::int64_t pad = n_fft / 2;
  std::vector<double> out(static_cast<std::size_t>(spec.signal_length), 0.0);
  for (std::int64_t t = 0; t < spec.signal_length; ++t) {
    const std::int64_t u = t + pad;
    if (u < padded_len && env[u] > 1e-11) out[t] = acc[u] / env[u];
  }
  return out;
}

double hz_to_mel(double hz, MelScale scale) {
  if (scale == MelScale::htk) return 2595.0 * std::log10(1.0 + hz / 700.0);
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return hz < min_log_hz ? hz / f_sp : min_log_mel + std::log(hz / min_log_hz) / logstep;
}

double mel_to_hz(double mel, MelScale scale) {
  if (scale == MelScale::htk) return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return mel < min_log_mel ? mel * f_sp : min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

template <typename Real>
Tensor<Real> mel_filterbank(const SpectralConfig& config) {
  config.validate();
  const int nbins = config.n_fft / 2 + 1;
  const int m = config.mel_bins;
  const double lo = hz_to_mel(config.fmin, config.scale);
  const double hi = hz_to_mel(config.effective_fmax(), config.scale);
  std::vector<double> edges(static_cast<std::size_t>(m + 2));
  for (int i = 0; i < m + 2; ++i) edges[i] = mel_to_hz(lo + (hi - lo) * i / (m + 1), config.scale);
  Tensor<Real> fb(Shape{m, nbins});
  auto d = fb.data();
  for (int i = 0; i < m; ++i) {
    const double left = edges[i], centre = edges[i + 1], right = edges[i + 2];
    const double norm = 2.0 / (right - left);
    for (int k = 0; k < nbins; ++k) {
      const double f = static_cast<double>(k) * config.sample_rate / config.n_fft;
      const double rise = (f - left) / (centre - left);
      const double fall = (right - f) / (right - centre);
      d[i * nbins + k] = static_cast<Real>(std::max(0.0, std::min(rise, fall)) * norm);
    }
  }
  return fb;
}

template <typename Real>
MelFrontend<Real>::MelFrontend(SpectralConfig config)
    : config_(config), filterbank_(mel_filterbank<Real>(config)) {
  if ((config.n_fft - config.hop_length) % 2 != 0) {
    throw std::invalid_argument("mel front end: n_fft - hop_length must be even");
  }
}

template <typename Real>
std::int64_t MelFrontend<Real>::frames_for(std::int64_t samples) const {
  return frame_count(samples + config_.n_fft - config_.hop_length, config_.n_fft, config_.hop_length);
}

template <typename Real>
Tensor<Real> MelFrontend<Real>::operator()(const Tensor<Real>& audio) const {
  Tensor<Real> x = audio;
  if (x.rank() == 1) x = reshape(x, Shape{1, x.dim(0)});
  if (x.rank() == 3 && x.dim(1) == 1) x = reshape(x, Shape{x.dim(0), x.dim(2)});
  if (x.rank() != 2) throw DimensionError("mel front end: audio must be [B, L], got " + shape_string(audio.shape()));
  const std::int64_t pad = (config_.n_fft - config_.hop_length) / 2;
  if (pad >= x.dim(1)) {
    throw DimensionError("mel front end: audio axis 1 length " + std::to_string(x.dim(1)) +
                         " is too short for reflect padding " + std::to_string(pad));
  }
  const auto padded = pad > 0 ? pad_reflect(x, pad, pad) : x;
  const auto mag = stft_magnitude(padded, config_.n_fft, config_.hop_length, config_.win_length, false);
  const auto mel = linear_last(mag, filterbank_);
  return transpose_last2(log_clamped(mel, config_.log_floor));
}

MelSpec mel_spectrogram(const AudioBuffer& audio, const SpectralConfig& config) {
  if (audio.sample_rate != config.sample_rate) {
    throw std::invalid_argument("mel_spectrogram: audio is " + std::to_string(audio.sample_rate) +
                                " Hz but config expects " + std::to_string(config.sample_rate) + " Hz");
  }
  NoGradGuard guard;
  MelFrontend<float> frontend(config);
  const auto n = static_cast<std::int64_t>(audio.samples.size());
  Tensor<float> x(Shape{1, n}, audio.samples);
  const auto out = frontend(x);  // [1, bins, frames]
  MelSpec mel;
  mel.config = config;
  mel.frames = out.dim(2);
  mel.values.resize(static_cast<std::size_t>(mel.frames * config.mel_bins));
  for (int m = 0; m < config.mel_bins; ++m)
    for (std::int64_t f = 0; f < mel.frames; ++f) mel.values[f * config.mel_bins + m] = out[m * mel.frames + f];
  return mel;
}

template Tensor<float> MelSpec::to_tensor<float>() const;
template Tensor<double> MelSpec::to_tensor<double>() const;
template Tensor<float> hann_window<float>(std::int64_t);
template Tensor<double> hann_window<double>(std::int64_t);
template Tensor<float> stft_magnitude<float>(const Tensor<float>&, int, int, int, bool);
template Tensor<double> stft_magnitude<double>(const Tensor<double>&, int, int, int, bool);
template Tensor<float> mel_filterbank<float>(const SpectralConfig&);
template Tensor<double> mel_filterbank<double>(const SpectralConfig&);
template class MelFrontend<float>;
template class MelFrontend<double>;

}  // namespace eva
