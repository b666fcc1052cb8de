#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "eva/config.hpp"

namespace eva {

using nlohmann::json;

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
  if (!(lr0 > 0)) fail("lr0 must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail("betas must be in [0, 1)");
  if (!(weight_decay >= 0)) fail("weight_decay must be >= 0");
  if (!(adam_eps > 0)) fail("adam_eps must be positive");
  if (!(lr_decay_per_step > 0 && lr_decay_per_step <= 1)) fail("lr_decay_per_step must be in (0, 1]");
  if (!(clip_norm > 0)) fail("clip_norm must be positive");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (segment_frames < 8) fail("segment_frames must be >= 8");
  if (total_steps < 0) fail("total_steps must be >= 0");
  for (const auto& d : data_dirs)
    if (!(d.weight > 0)) fail("data_dirs weights must be positive");
  balancer.validate();
}

void RunConfig::validate() const {
  spectral.validate();
  generator.validate();
  discriminator.validate();
  train.validate();
  if (generator.mel_bins != spectral.mel_bins) {
    throw std::invalid_argument("run config: generator.mel_bins " + std::to_string(generator.mel_bins) +
                                " != spectral.mel_bins " + std::to_string(spectral.mel_bins));
  }
  if (generator.upsample_factor() != spectral.hop_length) {
    throw std::invalid_argument("run config: product of upsample_rates " +
                                std::to_string(generator.upsample_factor()) + " != hop_length " +
                                std::to_string(spectral.hop_length));
  }
  const std::int64_t seg = static_cast<std::int64_t>(train.segment_frames) * spectral.hop_length;
  int max_fft = 0;
  for (const auto& r : discriminator.mrd_resolutions) max_fft = std::max(max_fft, r[0]);
  // MRD frames need a full window and centre padding of n_fft/2 < length.
  if (seg < discriminator.max_window() || seg <= max_fft / 2) {
    throw std::invalid_argument("run config: segment of " + std::to_string(seg) +
                                " samples is too short for the MRD resolutions");
  }
}

RunConfig RunConfig::preset(const std::string& name) {
  RunConfig c;
  c.generator = GeneratorConfig::preset(name);
  if (name == "evagan-tiny") {
    c.spectral = SpectralConfig::tiny_8k();
    c.discriminator = DiscriminatorConfig::desk();
    c.train.batch_size = 1;
    c.train.segment_frames = 48;
    c.train.total_steps = 1500;
    c.train.lr0 = 2e-3;
    c.train.seed = 1234;
  } else {
    c.spectral = SpectralConfig::full_44k();
    c.discriminator = DiscriminatorConfig::full();
  }
  return c;
}

json to_json(const SpectralConfig& c) {
  return {{"sample_rate", c.sample_rate}, {"n_fft", c.n_fft},         {"hop_length", c.hop_length},
          {"win_length", c.win_length},   {"mel_bins", c.mel_bins},   {"fmin", c.fmin},
          {"fmax", c.fmax},               {"log_floor", c.log_floor}, {"mel_scale", c.scale == MelScale::htk ? "htk" : "slaney"}};
}

json to_json(const GeneratorConfig& c) {
  return {{"mel_bins", c.mel_bins},
          {"cam_depths", c.cam_depths},
          {"cam_dims", c.cam_dims},
          {"cam_kernel", c.cam_kernel},
          {"cam_drop_path", c.cam_drop_path},
          {"upsample_rates", c.upsample_rates},
          {"upsample_kernels", c.upsample_kernels},
          {"initial_channels", c.initial_channels},
          {"mrf_kernels", c.mrf_kernels},
          {"mrf_dilations", c.mrf_dilations},
          {"output_tanh", c.output_tanh}};
}

json to_json(const DiscriminatorConfig& c) {
  return {{"mpd_periods", c.mpd_periods},     {"mrd_resolutions", c.mrd_resolutions},
          {"base_channels", c.base_channels}, {"max_channels", c.max_channels},
          {"use_silu", c.use_silu},           {"leaky_slope", c.leaky_slope}};
}

json to_json(const TrainConfig& c) {
  json dirs = json::array();
  for (const auto& d : c.data_dirs) dirs.push_back({{"path", d.path}, {"weight", d.weight}});
  return {{"lr0", c.lr0},
          {"betas", {c.beta1, c.beta2}},
          {"weight_decay", c.weight_decay},
          {"adam_eps", c.adam_eps},
          {"lr_decay_per_step", c.lr_decay_per_step},
          {"clip_norm", c.clip_norm},
          {"batch_size", c.batch_size},
          {"segment_frames", c.segment_frames},
          {"total_steps", c.total_steps},
          {"seed", c.seed},
          {"data_dirs", dirs},
          {"log_every", c.log_every},
          {"checkpoint_every", c.checkpoint_every},
          {"balancer",
           {{"names", c.balancer.names},
            {"weights", c.balancer.weights},
            {"reference_norm", c.balancer.reference_norm},
            {"ema_decay", c.balancer.ema_decay},
            {"epsilon", c.balancer.epsilon},
            {"dead_loss_steps", c.balancer.dead_loss_steps}}}};
}

json to_json(const RunConfig& c) {
  return {{"spectral", to_json(c.spectral)},
          {"generator", to_json(c.generator)},
          {"discriminator", to_json(c.discriminator)},
          {"train", to_json(c.train)},
          {"precision", c.precision == Precision::f32 ? "f32" : "f64"}};
}

namespace {

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const char* section) {
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw std::invalid_argument(std::string(section) + ": unknown field '" + k + "'");
  }
}

}  // namespace

SpectralConfig spectral_from_json(const json& j, SpectralConfig c) {
  reject_unknown(j, {"sample_rate", "n_fft", "hop_length", "win_length", "mel_bins", "fmin", "fmax", "log_floor", "mel_scale"},
                 "spectral");
  read(j, "sample_rate", c.sample_rate);
  read(j, "n_fft", c.n_fft);
  read(j, "hop_length", c.hop_length);
  read(j, "win_length", c.win_length);
  read(j, "mel_bins", c.mel_bins);
  read(j, "fmin", c.fmin);
  read(j, "fmax", c.fmax);
  read(j, "log_floor", c.log_floor);
  if (j.contains("mel_scale")) {
    const auto s = j.at("mel_scale").get<std::string>();
    if (s == "htk") {
      c.scale = MelScale::htk;
    } else if (s == "slaney") {
      c.scale = MelScale::slaney;
    } else {
      throw std::invalid_argument("spectral: mel_scale must be htk or slaney");
    }
  }
  return c;
}

SpectralConfig spectral_from_json(const json& j) { return spectral_from_json(j, SpectralConfig{}); }

GeneratorConfig generator_from_json(const json& j, GeneratorConfig c) {
  reject_unknown(j,
                 {"mel_bins", "cam_depths", "cam_dims", "cam_kernel", "cam_drop_path", "upsample_rates",
                  "upsample_kernels", "initial_channels", "mrf_kernels", "mrf_dilations", "output_tanh"},
                 "generator");
  read(j, "mel_bins", c.mel_bins);
  read(j, "cam_depths", c.cam_depths);
  read(j, "cam_dims", c.cam_dims);
  read(j, "cam_kernel", c.cam_kernel);
  read(j, "cam_drop_path", c.cam_drop_path);
  read(j, "upsample_rates", c.upsample_rates);
  read(j, "upsample_kernels", c.upsample_kernels);
  read(j, "initial_channels", c.initial_channels);
  read(j, "mrf_kernels", c.mrf_kernels);
  read(j, "mrf_dilations", c.mrf_dilations);
  read(j, "output_tanh", c.output_tanh);
  return c;
}

GeneratorConfig generator_from_json(const json& j) { return generator_from_json(j, GeneratorConfig::evagan_base()); }

DiscriminatorConfig discriminator_from_json(const json& j, DiscriminatorConfig c) {
  reject_unknown(j, {"mpd_periods", "mrd_resolutions", "base_channels", "max_channels", "use_silu", "leaky_slope"},
                 "discriminator");
  read(j, "mpd_periods", c.mpd_periods);
  read(j, "mrd_resolutions", c.mrd_resolutions);
  read(j, "base_channels", c.base_channels);
  read(j, "max_channels", c.max_channels);
  read(j, "use_silu", c.use_silu);
  read(j, "leaky_slope", c.leaky_slope);
  return c;
}

DiscriminatorConfig discriminator_from_json(const json& j) { return discriminator_from_json(j, DiscriminatorConfig{}); }

TrainConfig train_from_json(const json& j, TrainConfig c) {
  reject_unknown(j,
                 {"lr0", "betas", "weight_decay", "adam_eps", "lr_decay_per_step", "clip_norm", "batch_size",
                  "segment_frames", "total_steps", "seed", "data_dirs", "log_every", "checkpoint_every", "balancer"},
                 "train");
  read(j, "lr0", c.lr0);
  if (j.contains("betas")) {
    const auto b = j.at("betas").get<std::vector<double>>();
    if (b.size() != 2) throw std::invalid_argument("train: betas needs two values");
    c.beta1 = b[0];
    c.beta2 = b[1];
  }
  read(j, "weight_decay", c.weight_decay);
  read(j, "adam_eps", c.adam_eps);
  read(j, "lr_decay_per_step", c.lr_decay_per_step);
  read(j, "clip_norm", c.clip_norm);
  read(j, "batch_size", c.batch_size);
  read(j, "segment_frames", c.segment_frames);
  read(j, "total_steps", c.total_steps);
  read(j, "seed", c.seed);
  read(j, "log_every", c.log_every);
  read(j, "checkpoint_every", c.checkpoint_every);
  if (j.contains("data_dirs")) {
    c.data_dirs.clear();
    for (const auto& d : j.at("data_dirs")) {
      if (d.is_string()) {
        c.data_dirs.push_back({d.get<std::string>(), 1.0});
      } else {
        DataDir dd;
        dd.path = d.at("path").get<std::string>();
        read(d, "weight", dd.weight);
        c.data_dirs.push_back(dd);
      }
    }
  }
  if (j.contains("balancer")) {
    const auto& b = j.at("balancer");
    reject_unknown(b, {"names", "weights", "reference_norm", "ema_decay", "epsilon", "dead_loss_steps"}, "balancer");
    read(b, "names", c.balancer.names);
    read(b, "weights", c.balancer.weights);
    read(b, "reference_norm", c.balancer.reference_norm);
    read(b, "ema_decay", c.balancer.ema_decay);
    read(b, "epsilon", c.balancer.epsilon);
    read(b, "dead_loss_steps", c.balancer.dead_loss_steps);
  }
  return c;
}

TrainConfig train_from_json(const json& j) { return train_from_json(j, TrainConfig{}); }

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j, {"preset", "spectral", "generator", "discriminator", "train", "precision"}, "run config");
  RunConfig c = RunConfig::preset(j.contains("preset") ? j.at("preset").get<std::string>() : "evagan-base");
  if (j.contains("spectral")) c.spectral = spectral_from_json(j.at("spectral"), c.spectral);
  if (j.contains("generator")) c.generator = generator_from_json(j.at("generator"), c.generator);
  if (j.contains("discriminator")) c.discriminator = discriminator_from_json(j.at("discriminator"), c.discriminator);
  if (j.contains("train")) c.train = train_from_json(j.at("train"), c.train);
  if (j.contains("precision")) {
    const auto p = j.at("precision").get<std::string>();
    if (p == "f32") {
      c.precision = Precision::f32;
    } else if (p == "f64") {
      c.precision = Precision::f64;
    } else {
      throw std::invalid_argument("run config: precision must be f32 or f64");
    }
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument(path + ": cannot open config");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
  RunConfig c = run_config_from_json(j);
  const auto base = std::filesystem::path(path).parent_path();
  for (auto& d : c.train.data_dirs) {
    if (std::filesystem::path(d.path).is_relative()) d.path = (base / d.path).string();
  }
  return c;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string architecture_hash(const RunConfig& c) {
  const json j = {{"spectral", to_json(c.spectral)},
                  {"generator", to_json(c.generator)},
                  {"discriminator", to_json(c.discriminator)}};
  return hex64(fnv1a64(j.dump()));
}

}  // namespace eva
