#include "eva/generator.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "eva/ops.hpp"

namespace eva {

namespace {

constexpr int kIoKernel = 7;
constexpr int kExpand = 4;
constexpr double kNormEps = 1e-6;
constexpr double kInitStd = 0.01;

std::string join(const std::vector<int>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s + "]";
}

}  // namespace

std::int64_t GeneratorConfig::upsample_factor() const {
  std::int64_t f = 1;
  for (int r : upsample_rates) f *= r;
  return f;
}

void GeneratorConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("generator config: " + msg); };
  if (mel_bins < 1) fail("mel_bins must be >= 1");
  if (cam_depths.size() != cam_dims.size()) {
    fail("cam_depths " + join(cam_depths) + " and cam_dims " + join(cam_dims) + " differ in length");
  }
  for (int d : cam_depths)
    if (d < 0) fail("negative cam depth");
  for (int d : cam_dims)
    if (d < 1) fail("cam dims must be positive");
  if (has_cam() && (cam_kernel < 1 || cam_kernel % 2 == 0)) fail("cam_kernel must be odd");
  if (!(cam_drop_path >= 0 && cam_drop_path < 1)) fail("cam_drop_path must be in [0, 1)");
  if (upsample_rates.empty()) fail("no upsample levels");
  if (upsample_rates.size() != upsample_kernels.size()) {
    fail("upsample_rates " + join(upsample_rates) + " and upsample_kernels " + join(upsample_kernels) +
         " differ in length");
  }
  for (std::size_t i = 0; i < upsample_rates.size(); ++i) {
    const int r = upsample_rates[i], k = upsample_kernels[i];
    if (r < 1) fail("upsample rate must be positive");
    if (k < r) fail("level " + std::to_string(i) + ": kernel " + std::to_string(k) + " < rate " + std::to_string(r));
    if ((k - r) % 2 != 0) fail("level " + std::to_string(i) + ": kernel - rate must be even");
  }
  if (initial_channels < 1) fail("initial_channels must be positive");
  if ((initial_channels >> upsample_rates.size()) < 1) fail("initial_channels too small for the number of levels");
  if (mrf_kernels.empty()) fail("no MRF kernels");
  if (mrf_dilations.size() != mrf_kernels.size()) fail("mrf_dilations needs one list per MRF kernel");
  for (std::size_t j = 0; j < mrf_kernels.size(); ++j) {
    if (mrf_kernels[j] < 1 || mrf_kernels[j] % 2 == 0) fail("MRF kernels must be odd");
    if (mrf_dilations[j].empty()) fail("empty dilation list");
    for (int d : mrf_dilations[j])
      if (d < 1) fail("dilations must be positive");
  }
}

GeneratorConfig GeneratorConfig::hifigan_base_44k() {
  GeneratorConfig c;
  c.mel_bins = 160;
  c.upsample_rates = {8, 8, 2, 2, 2};
  c.upsample_kernels = {16, 16, 4, 4, 4};
  c.initial_channels = 512;
  c.mrf_kernels = {3, 7, 11};
  c.mrf_dilations = {{1, 3, 5}, {1, 3, 5}, {1, 3, 5}};
  return c;
}

GeneratorConfig GeneratorConfig::evagan_base() {
  GeneratorConfig c = hifigan_base_44k();
  c.cam_depths = {3, 3, 9, 3};
  c.cam_dims = {128, 256, 384, 512};
  c.cam_kernel = 7;
  c.cam_drop_path = 0.2;
  return c;
}

GeneratorConfig GeneratorConfig::evagan_big() {
  GeneratorConfig c = evagan_base();
  c.upsample_rates = {4, 4, 2, 2, 2, 2, 2};
  c.upsample_kernels = {8, 8, 4, 4, 4, 4, 4};
  c.initial_channels = 1536;
  c.mrf_kernels = {3, 7, 11, 13};
  c.mrf_dilations = {{1, 3, 5}, {1, 3, 5}, {1, 3, 5}, {1, 3, 5}};
  return c;
}

GeneratorConfig GeneratorConfig::evagan_tiny() {
  GeneratorConfig c;
  c.mel_bins = 32;
  c.cam_depths = {1, 1};
  c.cam_dims = {32, 64};
  c.cam_kernel = 7;
  c.cam_drop_path = 0.05;
  c.upsample_rates = {4, 4, 4};
  c.upsample_kernels = {8, 8, 8};
  c.initial_channels = 64;
  c.mrf_kernels = {3, 5, 7};
  c.mrf_dilations = {{1, 3, 5}, {1, 3, 5}, {1, 3, 5}};
  return c;
}

GeneratorConfig GeneratorConfig::preset(const std::string& name) {
  if (name == "hifigan-base-44k") return hifigan_base_44k();
  if (name == "evagan-base") return evagan_base();
  if (name == "evagan-big") return evagan_big();
  if (name == "evagan-tiny") return evagan_tiny();
  throw std::invalid_argument("unknown generator preset: " + name);
}

ParameterBreakdown count_parameters(const GeneratorConfig& c) {
  c.validate();
  ParameterBreakdown out;
  auto conv = [](std::int64_t cin, std::int64_t cout, std::int64_t k) { return cin * cout * k + cout; };
  std::int64_t feature_dim = c.mel_bins;
  if (c.has_cam()) {
    const std::int64_t k = c.cam_kernel;
    out.cam += conv(c.mel_bins, c.cam_dims[0], k) + 2 * c.cam_dims[0];
    for (std::size_t s = 0; s < c.cam_dims.size(); ++s) {
      const std::int64_t ch = c.cam_dims[s];
      const std::int64_t block = (k * ch + ch) + 2 * ch + conv(ch, kExpand * ch, 1) + conv(kExpand * ch, ch, 1);
      out.cam += c.cam_depths[s] * block;
      if (s + 1 < c.cam_dims.size()) out.cam += 2 * ch + conv(ch, c.cam_dims[s + 1], 1);
    }
    out.cam += 2 * c.cam_dims.back();
    feature_dim = c.cam_dims.back();
  }
  std::int64_t ch = c.initial_channels;
  out.upsampler += conv(feature_dim, ch, kIoKernel);
  for (std::size_t i = 0; i < c.upsample_rates.size(); ++i) {
    const std::int64_t next = ch / 2;
    out.upsampler += ch * next * c.upsample_kernels[i] + next;
    for (std::size_t j = 0; j < c.mrf_kernels.size(); ++j) {
      out.upsampler += 2 * static_cast<std::int64_t>(c.mrf_dilations[j].size()) * conv(next, next, c.mrf_kernels[j]);
    }
    ch = next;
  }
  out.upsampler += conv(ch, 1, kIoKernel);
  return out;
}

FlopBreakdown count_flops_per_frame(const GeneratorConfig& c) {
  c.validate();
  FlopBreakdown out;
  // Per output sample of a conv: 2 * Cin/groups * Cout * K.
  auto conv = [](double cin, double cout, double k) { return 2.0 * cin * cout * k; };
  double feature_dim = c.mel_bins;
  if (c.has_cam()) {
    const double k = c.cam_kernel;
    out.cam += conv(c.mel_bins, c.cam_dims[0], k);
    for (std::size_t s = 0; s < c.cam_dims.size(); ++s) {
      const double ch = c.cam_dims[s];
      out.cam += c.cam_depths[s] * (conv(1, ch, k) + 2 * conv(ch, kExpand * ch, 1));
      if (s + 1 < c.cam_dims.size()) out.cam += conv(ch, c.cam_dims[s + 1], 1);
    }
    feature_dim = c.cam_dims.back();
  }
  double ch = c.initial_channels;
  out.upsampler += conv(feature_dim, ch, kIoKernel);
  double samples = 1.0;  // time steps per mel frame at the current level
  for (std::size_t i = 0; i < c.upsample_rates.size(); ++i) {
    const double next = std::floor(ch / 2);
    // Transposed conv: each input step scatters into K outputs.
    out.upsampler += samples * conv(ch, next, c.upsample_kernels[i]);
    samples *= c.upsample_rates[i];
    for (std::size_t j = 0; j < c.mrf_kernels.size(); ++j) {
      out.upsampler +=
          samples * 2.0 * static_cast<double>(c.mrf_dilations[j].size()) * conv(next, next, c.mrf_kernels[j]);
    }
    ch = next;
  }
  out.upsampler += samples * conv(ch, 1, kIoKernel);
  return out;
}

template <typename Real>
Generator<Real>::Generator(GeneratorConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  auto conv = [this](const std::string& name, std::int64_t cin, std::int64_t cout, std::int64_t k) {
    params_.add(name + ".weight", {cout, cin, k});
    params_.add(name + ".bias", {cout});
  };
  auto norm = [this](const std::string& name, std::int64_t ch) {
    params_.add(name + ".gamma", {ch});
    params_.add(name + ".beta", {ch});
  };
  std::int64_t feature_dim = c.mel_bins;
  if (c.has_cam()) {
    conv("cam.stem", c.mel_bins, c.cam_dims[0], c.cam_kernel);
    norm("cam.stem_norm", c.cam_dims[0]);
    const int total_blocks = std::accumulate(c.cam_depths.begin(), c.cam_depths.end(), 0);
    int block_index = 0;
    for (std::size_t s = 0; s < c.cam_dims.size(); ++s) {
      const std::int64_t ch = c.cam_dims[s];
      for (int b = 0; b < c.cam_depths[s]; ++b) {
        const std::string name = "cam.stage" + std::to_string(s) + ".block" + std::to_string(b);
        params_.add(name + ".dw.weight", {ch, 1, c.cam_kernel});
        params_.add(name + ".dw.bias", {ch});
        norm(name + ".norm", ch);
        conv(name + ".pw1", ch, kExpand * ch, 1);
        conv(name + ".pw2", kExpand * ch, ch, 1);
        // Linear ramp from 0 at the first block to cam_drop_path at the last.
        block_drop_rates_.push_back(total_blocks > 1 ? c.cam_drop_path * block_index / (total_blocks - 1) : 0.0);
        ++block_index;
      }
      if (s + 1 < c.cam_dims.size()) {
        const std::string name = "cam.transition" + std::to_string(s);
        norm(name + ".norm", ch);
        conv(name + ".conv", ch, c.cam_dims[s + 1], 1);
      }
    }
    norm("cam.norm", c.cam_dims.back());
    feature_dim = c.cam_dims.back();
  }
  std::int64_t ch = c.initial_channels;
  conv("conv_pre", feature_dim, ch, kIoKernel);
  for (std::size_t i = 0; i < c.upsample_rates.size(); ++i) {
    const std::int64_t next = ch / 2;
    params_.add("ups." + std::to_string(i) + ".weight", {ch, next, c.upsample_kernels[i]});
    params_.add("ups." + std::to_string(i) + ".bias", {next});
    for (std::size_t j = 0; j < c.mrf_kernels.size(); ++j) {
      for (std::size_t d = 0; d < c.mrf_dilations[j].size(); ++d) {
        const std::string name = "mrf." + std::to_string(i) + "." + std::to_string(j);
        conv(name + ".convs1." + std::to_string(d), next, next, c.mrf_kernels[j]);
        conv(name + ".convs2." + std::to_string(d), next, next, c.mrf_kernels[j]);
      }
    }
    ch = next;
  }
  conv("conv_post", ch, 1, kIoKernel);

  std::mt19937_64 rng(seed);
  for (const auto& e : params_.entries()) {
    Tensor<Real> t = e.tensor;
    const auto& n = e.name;
    if (n.ends_with(".weight")) {
      init_normal(t, kInitStd, rng);
    } else if (n.ends_with(".gamma")) {
      for (auto& v : t.data()) v = Real(1);
    }
  }
}

template <typename Real>
ParameterBreakdown Generator<Real>::breakdown() const {
  ParameterBreakdown b;
  b.cam = params_.count_prefix("cam.");
  b.upsampler = params_.count() - b.cam;
  return b;
}

template <typename Real>
int Generator<Real>::level_channels(std::size_t level) const {
  return config_.initial_channels >> (level + 1);
}

template <typename Real>
Tensor<Real> Generator<Real>::cam_forward(const Tensor<Real>& mel, bool training, std::mt19937_64* drop_rng) const {
  const auto& c = config_;
  if (mel.rank() != 3 || mel.dim(1) != c.mel_bins) {
    throw DimensionError("generator: mel axis 1 must have " + std::to_string(c.mel_bins) + " bins, got " +
                         shape_string(mel.shape()));
  }
  if (!c.has_cam()) return mel;
  const std::int64_t pad = c.cam_kernel / 2;
  auto x = conv1d(mel, p("cam.stem.weight"), p("cam.stem.bias"), {1, pad, 1, 1});
  x = layer_norm_channels(x, p("cam.stem_norm.gamma"), p("cam.stem_norm.beta"), kNormEps);
  std::size_t block_index = 0;
  const std::int64_t batch = mel.dim(0);
  for (std::size_t s = 0; s < c.cam_dims.size(); ++s) {
    const std::int64_t ch = c.cam_dims[s];
    for (int b = 0; b < c.cam_depths[s]; ++b) {
      const std::string name = "cam.stage" + std::to_string(s) + ".block" + std::to_string(b);
      auto h = conv1d(x, p(name + ".dw.weight"), p(name + ".dw.bias"), {1, pad, 1, ch});
      h = layer_norm_channels(h, p(name + ".norm.gamma"), p(name + ".norm.beta"), kNormEps);
      h = conv1d(h, p(name + ".pw1.weight"), p(name + ".pw1.bias"), {});
      h = activation(h, Activation::silu());
      h = conv1d(h, p(name + ".pw2.weight"), p(name + ".pw2.bias"), {});
      const double rate = block_drop_rates_[block_index++];
      if (training && rate > 0) {
        if (!drop_rng) throw std::invalid_argument("generator: training with drop path needs an RNG");
        std::vector<std::uint8_t> keep(static_cast<std::size_t>(batch));
        for (auto& k : keep) k = std::uniform_real_distribution<double>(0.0, 1.0)(*drop_rng) >= rate;
        h = drop_path(h, std::span<const std::uint8_t>(keep), 1.0 - rate);
      }
      x = add(x, h);
    }
    if (s + 1 < c.cam_dims.size()) {
      const std::string name = "cam.transition" + std::to_string(s);
      x = layer_norm_channels(x, p(name + ".norm.gamma"), p(name + ".norm.beta"), kNormEps);
      x = conv1d(x, p(name + ".conv.weight"), p(name + ".conv.bias"), {});
    }
  }
  return layer_norm_channels(x, p("cam.norm.gamma"), p("cam.norm.beta"), kNormEps);
}

template <typename Real>
Tensor<Real> Generator<Real>::resblock_forward(std::size_t level, std::size_t block, const Tensor<Real>& input) const {
  const int k = config_.mrf_kernels.at(block);
  const auto& dilations = config_.mrf_dilations.at(block);
  const std::string name = "mrf." + std::to_string(level) + "." + std::to_string(block);
  auto x = input;
  for (std::size_t d = 0; d < dilations.size(); ++d) {
    const std::int64_t dil = dilations[d];
    auto h = activation(x, Activation::silu());
    h = conv1d(h, p(name + ".convs1." + std::to_string(d) + ".weight"), p(name + ".convs1." + std::to_string(d) + ".bias"),
               {1, dil * (k - 1) / 2, dil, 1});
    h = activation(h, Activation::silu());
    h = conv1d(h, p(name + ".convs2." + std::to_string(d) + ".weight"), p(name + ".convs2." + std::to_string(d) + ".bias"),
               {1, (k - 1) / 2, 1, 1});
    x = add(x, h);
  }
  return x;
}

template <typename Real>
Tensor<Real> Generator<Real>::mrf_forward(std::size_t level, const Tensor<Real>& x) const {
  const std::size_t n = config_.mrf_kernels.size();
  if (n == 1) return resblock_forward(level, 0, x);
  std::vector<Tensor<Real>> outs;
  outs.reserve(n);
  for (std::size_t j = 0; j < n; ++j) outs.push_back(resblock_forward(level, j, x));
  return scale(add_n(std::span<const Tensor<Real>>(outs)), 1.0 / static_cast<double>(n));
}

template <typename Real>
Tensor<Real> Generator<Real>::forward(const Tensor<Real>& mel, bool training, std::mt19937_64* drop_rng) const {
  const auto& c = config_;
  auto x = cam_forward(mel, training, drop_rng);
  x = conv1d(x, p("conv_pre.weight"), p("conv_pre.bias"), {1, kIoKernel / 2, 1, 1});
  for (std::size_t i = 0; i < c.upsample_rates.size(); ++i) {
    const int r = c.upsample_rates[i], k = c.upsample_kernels[i];
    x = activation(x, Activation::silu());
    x = conv_transpose1d(x, p("ups." + std::to_string(i) + ".weight"), p("ups." + std::to_string(i) + ".bias"), r,
                         (k - r) / 2);
    x = mrf_forward(i, x);
  }
  x = activation(x, Activation::silu());
  x = conv1d(x, p("conv_post.weight"), p("conv_post.bias"), {1, kIoKernel / 2, 1, 1});
  if (c.output_tanh) x = activation(x, Activation::tanh());
  return x;
}

template <typename Real>
AudioBuffer generate(const Generator<Real>& model, const MelSpec& mel) {
  if (mel.config.mel_bins != model.config().mel_bins) {
    throw std::invalid_argument("generate: mel has " + std::to_string(mel.config.mel_bins) +
                                " bins but the generator expects " + std::to_string(model.config().mel_bins));
  }
  if (mel.config.hop_length != model.config().upsample_factor()) {
    throw std::invalid_argument("generate: mel hop " + std::to_string(mel.config.hop_length) +
                                " does not match the generator upsampling factor " +
                                std::to_string(model.config().upsample_factor()));
  }
  NoGradGuard guard;
  const auto y = model.forward(mel.to_tensor<Real>(), false, nullptr);
  AudioBuffer audio;
  audio.sample_rate = mel.config.sample_rate;
  audio.samples.assign(y.data().begin(), y.data().end());
  return audio;
}

template class Generator<float>;
template class Generator<double>;
template AudioBuffer generate<float>(const Generator<float>&, const MelSpec&);
template AudioBuffer generate<double>(const Generator<double>&, const MelSpec&);

}  // namespace eva
