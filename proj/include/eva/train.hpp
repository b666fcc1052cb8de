#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "eva/balancer.hpp"
#include "eva/config.hpp"
#include "eva/discriminators.hpp"
#include "eva/generator.hpp"
#include "eva/losses.hpp"
#include "eva/signal.hpp"

namespace eva {

// ---- optimizer ------------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.8;
  double beta2 = 0.99;
  double weight_decay = 0.01;
  double eps = 1e-8;
};

/// One decoupled-weight-decay Adam update of a flat buffer. `step` is the
/// 1-based update count used for bias correction.
template <typename Real>
void adamw_step(std::span<Real> param, std::span<const Real> grad, std::span<Real> m, std::span<Real> v,
                std::int64_t step, const AdamWConfig& cfg);

template <typename Real>
class AdamW {
 public:
  AdamW(std::vector<NamedParameter<Real>> params, AdamWConfig config);

  /// Applies one update from the parameters' current gradients (missing
  /// gradients count as zero).
  void step();
  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }
  std::int64_t steps() const { return steps_; }
  void set_steps(std::int64_t s) { steps_ = s; }

  const std::vector<NamedParameter<Real>>& params() const { return params_; }
  std::vector<std::vector<Real>>& first_moments() { return m_; }
  std::vector<std::vector<Real>>& second_moments() { return v_; }

 private:
  std::vector<NamedParameter<Real>> params_;
  AdamWConfig config_;
  std::vector<std::vector<Real>> m_, v_;
  std::int64_t steps_ = 0;
};

/// lr0 * decay^step.
double lr_at(std::int64_t step, const TrainConfig& cfg);

// ---- data -----------------------------------------------------------------

struct DataSource {
  std::string name;
  double weight = 1.0;
  std::vector<AudioBuffer> files;
};

struct Dataset {
  std::vector<DataSource> sources;

  /// Loads every .wav in each directory (sorted by name). Sample rates must
  /// match `sample_rate`.
  static Dataset from_dirs(const std::vector<DataDir>& dirs, int sample_rate);
  bool empty() const;
};

template <typename Real>
struct Batch {
  Tensor<Real> audio;  // [B, 1, segment_frames * hop]
  Tensor<Real> mel;    // [B, mel_bins, segment_frames]
  std::vector<std::size_t> source_index;
};

/// Weighted source, uniform file, uniform crop; files shorter than the
/// segment are extended by mirror reflection.
template <typename Real>
Batch<Real> sample_batch(const Dataset& data, int batch_size, int segment_frames, const MelFrontend<Real>& frontend,
                         std::mt19937_64& rng);

/// Picks a source index with probability proportional to its weight.
std::size_t sample_source(const Dataset& data, std::mt19937_64& rng);

// ---- checkpoint container ---------------------------------------------------

struct StoredTensor {
  std::string name;
  std::uint8_t dtype = 0;  // 0 = f32, 1 = f64
  Shape shape;
  std::vector<double> values;
};

constexpr std::uint32_t kCheckpointVersion = 1;

void write_container(const std::string& path, const std::vector<StoredTensor>& tensors);
/// Throws FormatError on bad magic, version mismatch or truncation.
std::vector<StoredTensor> read_container(const std::string& path);
/// Same basename with a .json extension.
std::string sidecar_path(const std::string& container_path);

template <typename Real>
StoredTensor store(const std::string& name, std::span<const Real> values, const Shape& shape);

/// Copies tensors named prefix + parameter name into `params`; missing or
/// mis-shaped entries throw.
template <typename Real>
void load_parameters(ParameterSet<Real>& params, const std::vector<StoredTensor>& stored, const std::string& prefix);

// ---- trainer --------------------------------------------------------------

template <typename Real>
class Trainer {
 public:
  Trainer(RunConfig config, Dataset data);

  /// Samples a batch and performs one D step then one G step.
  LossReport step();
  /// One D step then one G step on a given batch.
  LossReport train_step(const Batch<Real>& batch);
  Batch<Real> next_batch();

  /// Writes the tensor container and its JSON sidecar.
  void save(const std::string& path) const;
  /// Restores parameters, moments, balancer, RNG streams and the step counter.
  void load(const std::string& path);

  std::int64_t step_count() const { return step_; }
  const RunConfig& config() const { return config_; }
  Generator<Real>& generator() { return generator_; }
  Discriminators<Real>& discriminators() { return discriminators_; }
  const Balancer<Real>& balancer() const { return balancer_; }
  const MelFrontend<Real>& frontend() const { return frontend_; }
  const LossReport& last_report() const { return last_; }

 private:
  RunConfig config_;
  Dataset data_;
  Generator<Real> generator_;
  Discriminators<Real> discriminators_;
  MelFrontend<Real> frontend_;
  Balancer<Real> balancer_;
  AdamW<Real> opt_g_, opt_d_;
  std::mt19937_64 sample_rng_, drop_rng_;
  std::int64_t step_ = 0;
  LossReport last_;
};

/// Loads only the generator (any stored precision) plus its run config from
/// a checkpoint written by Trainer::save.
template <typename Real>
Generator<Real> load_generator(const std::string& path, RunConfig* config_out = nullptr);

}  // namespace eva
