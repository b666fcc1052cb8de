#include "eva/discriminators.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

#include "eva/ops.hpp"
#include "eva/signal.hpp"

namespace eva {

namespace {

constexpr double kInitStd = 0.01;
constexpr double kMagFloor = 1e-6;
constexpr int kMrdStrided = 3;

}  // namespace

void DiscriminatorConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("discriminator config: " + msg); };
  if (mpd_periods.empty() && mrd_resolutions.empty()) fail("no sub-discriminators");
  for (std::size_t i = 0; i < mpd_periods.size(); ++i) {
    if (mpd_periods[i] < 1) fail("periods must be positive");
    if (i > 0 && mpd_periods[i] <= mpd_periods[i - 1]) fail("periods must be strictly increasing");
  }
  for (const auto& r : mrd_resolutions) {
    if (r[0] < 2 || r[1] < 1 || r[2] < 2 || r[2] > r[0]) fail("bad resolution");
  }
  if (base_channels < 1 || max_channels < base_channels) fail("bad channel schedule");
}

int DiscriminatorConfig::max_window() const {
  int w = 0;
  for (const auto& r : mrd_resolutions) w = std::max(w, r[2]);
  return w;
}

DiscriminatorConfig DiscriminatorConfig::full() {
  DiscriminatorConfig c;
  c.base_channels = 32;
  c.max_channels = 1024;
  return c;
}

DiscriminatorConfig DiscriminatorConfig::desk() { return DiscriminatorConfig{}; }

template <typename Real>
void DiscriminatorOutput<Real>::append(DiscriminatorOutput&& other) {
  for (auto& n : other.names) names.push_back(std::move(n));
  for (auto& l : other.logits) logits.push_back(std::move(l));
  for (auto& f : other.features) features.push_back(std::move(f));
}

template <typename Real>
std::vector<int> Discriminators<Real>::mpd_channels() const {
  std::vector<int> out;
  for (int m : {1, 4, 16, 32, 32}) out.push_back(std::min(config_.base_channels * m, config_.max_channels));
  return out;
}

template <typename Real>
int Discriminators<Real>::mrd_channels() const {
  return std::min(config_.base_channels, config_.max_channels);
}

template <typename Real>
Discriminators<Real>::Discriminators(DiscriminatorConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  auto conv = [this](const std::string& name, std::int64_t cin, std::int64_t cout, std::int64_t kh, std::int64_t kw) {
    params_.add(name + ".weight", {cout, cin, kh, kw});
    params_.add(name + ".bias", {cout});
  };
  const auto ch = mpd_channels();
  for (int period : config_.mpd_periods) {
    const std::string base = "mpd.p" + std::to_string(period);
    std::int64_t cin = 1;
    for (std::size_t l = 0; l < ch.size(); ++l) {
      conv(base + ".conv" + std::to_string(l), cin, ch[l], 5, 1);
      cin = ch[l];
    }
    conv(base + ".post", cin, 1, 3, 1);
  }
  const int mc = mrd_channels();
  for (std::size_t r = 0; r < config_.mrd_resolutions.size(); ++r) {
    const std::string base = "mrd.r" + std::to_string(r);
    conv(base + ".conv0", 1, mc, 9, 3);
    for (int l = 1; l <= kMrdStrided; ++l) conv(base + ".conv" + std::to_string(l), mc, mc, 9, 3);
    conv(base + ".conv" + std::to_string(kMrdStrided + 1), mc, mc, 3, 3);
    conv(base + ".post", mc, 1, 3, 3);
  }
  std::mt19937_64 rng(seed);
  for (const auto& e : params_.entries()) {
    if (e.name.ends_with(".weight")) {
      Tensor<Real> t = e.tensor;
      init_normal(t, kInitStd, rng);
    }
  }
}

template <typename Real>
Tensor<Real> Discriminators<Real>::act(const Tensor<Real>& x) const {
  return activation(x, config_.use_silu ? Activation::silu() : Activation::leaky_relu(config_.leaky_slope));
}

template <typename Real>
DiscriminatorOutput<Real> Discriminators<Real>::mpd_forward(const Tensor<Real>& audio) const {
  if (audio.rank() != 3 || audio.dim(1) != 1) {
    throw DimensionError("discriminator: audio must be [B, 1, L], got " + shape_string(audio.shape()));
  }
  const std::int64_t batch = audio.dim(0), len = audio.dim(2);
  DiscriminatorOutput<Real> out;
  const auto ch = mpd_channels();
  for (int period : config_.mpd_periods) {
    if (len < period) {
      throw DimensionError("mpd: audio axis 2 length " + std::to_string(len) + " shorter than period " +
                           std::to_string(period));
    }
    const std::string base = "mpd.p" + std::to_string(period);
    auto x = audio;
    const std::int64_t rem = len % period;
    if (rem != 0) x = pad_reflect(x, 0, period - rem);
    const std::int64_t rows = x.dim(2) / period;
    x = reshape(x, Shape{batch, 1, rows, period});
    std::vector<Tensor<Real>> feats;
    for (std::size_t l = 0; l < ch.size(); ++l) {
      const std::int64_t stride = l + 1 < ch.size() ? 3 : 1;
      const std::string name = base + ".conv" + std::to_string(l);
      x = act(conv2d(x, params_.get(name + ".weight"), params_.get(name + ".bias"), {stride, 1, 2, 0}));
      feats.push_back(x);
    }
    x = conv2d(x, params_.get(base + ".post.weight"), params_.get(base + ".post.bias"), {1, 1, 1, 0});
    feats.push_back(x);
    out.names.push_back("mpd_" + std::to_string(period));
    out.logits.push_back(x);
    out.features.push_back(std::move(feats));
  }
  return out;
}

template <typename Real>
DiscriminatorOutput<Real> Discriminators<Real>::mrd_forward(const Tensor<Real>& audio) const {
  if (audio.rank() != 3 || audio.dim(1) != 1) {
    throw DimensionError("discriminator: audio must be [B, 1, L], got " + shape_string(audio.shape()));
  }
  const std::int64_t batch = audio.dim(0), len = audio.dim(2);
  const auto flat = reshape(audio, Shape{batch, len});
  DiscriminatorOutput<Real> out;
  for (std::size_t r = 0; r < config_.mrd_resolutions.size(); ++r) {
    const auto [n_fft, hop, win] = config_.mrd_resolutions[r];
    const std::string base = "mrd.r" + std::to_string(r);
    auto mag = stft_magnitude(flat, n_fft, hop, win, true);  // [B, frames, bins]
    auto x = log(add_scalar(mag, kMagFloor));
    // Kept frames-major so convolution rows run along the long frequency axis.
    x = reshape(x, Shape{batch, 1, x.dim(1), x.dim(2)});
    std::vector<Tensor<Real>> feats;
    auto layer = [&](int l, Conv2dOptions opt) {
      const std::string name = base + ".conv" + std::to_string(l);
      x = act(conv2d(x, params_.get(name + ".weight"), params_.get(name + ".bias"), opt));
      feats.push_back(x);
    };
    layer(0, {1, 1, 4, 1});
    for (int l = 1; l <= kMrdStrided; ++l) layer(l, {2, 1, 4, 1});
    layer(kMrdStrided + 1, {1, 1, 1, 1});
    x = conv2d(x, params_.get(base + ".post.weight"), params_.get(base + ".post.bias"), {1, 1, 1, 1});
    feats.push_back(x);
    out.names.push_back("mrd_" + std::to_string(n_fft) + "_" + std::to_string(hop) + "_" + std::to_string(win));
    out.logits.push_back(x);
    out.features.push_back(std::move(feats));
  }
  return out;
}

template <typename Real>
DiscriminatorOutput<Real> Discriminators<Real>::forward(const Tensor<Real>& audio) const {
  auto out = mpd_forward(audio);
  out.append(mrd_forward(audio));
  return out;
}

template struct DiscriminatorOutput<float>;
template struct DiscriminatorOutput<double>;
template class Discriminators<float>;
template class Discriminators<double>;

}  // namespace eva
