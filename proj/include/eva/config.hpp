#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "eva/balancer.hpp"
#include "eva/discriminators.hpp"
#include "eva/generator.hpp"
#include "eva/signal.hpp"

namespace eva {

struct DataDir {
  std::string path;
  double weight = 1.0;
};

struct TrainConfig {
  double lr0 = 1e-4;
  double beta1 = 0.8;
  double beta2 = 0.99;
  double weight_decay = 0.01;
  double adam_eps = 1e-8;
  double lr_decay_per_step = 0.999999;
  double clip_norm = 1000.0;
  int batch_size = 16;
  int segment_frames = 256;
  std::int64_t total_steps = 1000;
  std::uint64_t seed = 0;
  std::vector<DataDir> data_dirs;
  int log_every = 1;
  std::int64_t checkpoint_every = 0;  // 0: only at the end
  BalancerConfig balancer;

  void validate() const;
};

enum class Precision { f32, f64 };

struct RunConfig {
  SpectralConfig spectral;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  TrainConfig train;
  Precision precision = Precision::f32;

  /// Cross-module checks (hop == upsampling factor, mel bins agree, ...).
  void validate() const;

  /// Built-in preset by name: hifigan-base-44k, evagan-base, evagan-big, evagan-tiny.
  static RunConfig preset(const std::string& name);
};

nlohmann::json to_json(const SpectralConfig& c);
nlohmann::json to_json(const GeneratorConfig& c);
nlohmann::json to_json(const DiscriminatorConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const RunConfig& c);

SpectralConfig spectral_from_json(const nlohmann::json& j);
GeneratorConfig generator_from_json(const nlohmann::json& j);
DiscriminatorConfig discriminator_from_json(const nlohmann::json& j);
TrainConfig train_from_json(const nlohmann::json& j);
/// Missing sections fall back to the defaults of the named "preset" field
/// when present, else to evagan-base.
RunConfig run_config_from_json(const nlohmann::json& j);

/// Reads a run config file; relative data_dirs resolve against its folder.
RunConfig load_run_config(const std::string& path);

/// FNV-1a 64 over the canonical JSON dump.
std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t v);
/// Hash of the architecture sections (spectral, generator, discriminator).
std::string architecture_hash(const RunConfig& c);

}  // namespace eva
