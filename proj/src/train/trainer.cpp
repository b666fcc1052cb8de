#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "eva/autograd.hpp"
#include "eva/io.hpp"
#include "eva/ops.hpp"
#include "eva/train.hpp"

namespace eva {

namespace {

AdamWConfig adam_config(const TrainConfig& t) { return {t.lr0, t.beta1, t.beta2, t.weight_decay, t.adam_eps}; }

template <typename Real>
std::vector<NamedParameter<Real>> named(const ParameterSet<Real>& p) {
  return p.entries();
}

std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

void rng_restore(std::mt19937_64& rng, const std::string& text) {
  std::istringstream s(text);
  s >> rng;
  if (!s) throw FormatError("checkpoint: malformed RNG state");
}

template <typename Real>
void append_moments(std::vector<StoredTensor>& out, const std::string& prefix, AdamW<Real>& opt) {
  for (std::size_t i = 0; i < opt.params().size(); ++i) {
    const auto& p = opt.params()[i];
    out.push_back(store<Real>(prefix + ".m." + p.name, opt.first_moments()[i], p.tensor.shape()));
    out.push_back(store<Real>(prefix + ".v." + p.name, opt.second_moments()[i], p.tensor.shape()));
  }
}

template <typename Real>
void restore_moments(const std::vector<StoredTensor>& stored, const std::string& prefix, AdamW<Real>& opt) {
  std::map<std::string, const StoredTensor*> index;
  for (const auto& t : stored) index[t.name] = &t;
  for (std::size_t i = 0; i < opt.params().size(); ++i) {
    const auto& name = opt.params()[i].name;
    for (int which = 0; which < 2; ++which) {
      const std::string key = prefix + (which == 0 ? ".m." : ".v.") + name;
      auto it = index.find(key);
      if (it == index.end()) throw FormatError("checkpoint is missing optimizer state " + key);
      auto& dst = which == 0 ? opt.first_moments()[i] : opt.second_moments()[i];
      if (it->second->values.size() != dst.size()) throw FormatError("checkpoint optimizer state " + key + " size");
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<Real>(it->second->values[k]);
    }
  }
}

}  // namespace

template <typename Real>
Trainer<Real>::Trainer(RunConfig config, Dataset data)
    : config_(std::move(config)),
      data_(std::move(data)),
      generator_((config_.validate(), config_.generator), config_.train.seed),
      discriminators_(config_.discriminator, config_.train.seed + 1),
      frontend_(config_.spectral),
      balancer_(config_.train.balancer),
      opt_g_(named(generator_.parameters()), adam_config(config_.train)),
      opt_d_(named(discriminators_.parameters()), adam_config(config_.train)),
      sample_rng_(config_.train.seed + 2),
      drop_rng_(config_.train.seed + 3) {
  if (data_.empty()) throw std::invalid_argument("trainer: dataset is empty");
  const auto& names = config_.train.balancer.names;
  for (const auto& n : names) {
    if (n != "mel" && n != "adv_g" && n != "fm" && n != "msstft") {
      throw std::invalid_argument("trainer: unknown balanced loss '" + n + "'");
    }
  }
}

template <typename Real>
Batch<Real> Trainer<Real>::next_batch() {
  return sample_batch<Real>(data_, config_.train.batch_size, config_.train.segment_frames, frontend_, sample_rng_);
}

template <typename Real>
LossReport Trainer<Real>::step() {
  return train_step(next_batch());
}

template <typename Real>
LossReport Trainer<Real>::train_step(const Batch<Real>& batch) {
  const auto& tc = config_.train;
  const double lr = lr_at(step_, tc);
  opt_g_.set_lr(lr);
  opt_d_.set_lr(lr);
  LossReport report;
  report.step = step_;
  report.lr = lr;

  std::vector<Resolution> resolutions(config_.discriminator.mrd_resolutions.begin(),
                                      config_.discriminator.mrd_resolutions.end());
  const Tensor<Real> fake = generator_.forward(batch.mel, true, &drop_rng_);

  // Discriminator step on the detached generator output.
  {
    auto d_params = discriminators_.parameters().tensors();
    for (auto& p : d_params) p.zero_grad();
    const auto real_out = discriminators_.forward(batch.audio);
    const auto fake_out = discriminators_.forward(fake.detach());
    const auto loss_d = adv_loss_d(real_out, fake_out);
    report.adv_d = loss_d.item();
    report.adv_d_per_sub = adv_d_breakdown(real_out, fake_out);
    if (!std::isfinite(report.adv_d)) {
      last_ = report;
      throw NumericError("non-finite discriminator loss at step " + std::to_string(step_) + ": " +
                         report.to_json_line());
    }
    backward(loss_d, std::span<const Tensor<Real>>(d_params));
    report.grad_scale_d = clip_global_norm(std::span<Tensor<Real>>(d_params), tc.clip_norm);
    opt_d_.step();
  }

  // Generator step: balance the per-loss gradients at the waveform, then
  // backpropagate the combined gradient once into the generator.
  {
    auto g_params = generator_.parameters().tensors();
    for (auto& p : g_params) p.zero_grad();
    DiscriminatorOutput<Real> real_out;
    {
      NoGradGuard guard;
      real_out = discriminators_.forward(batch.audio);
    }
    const Tensor<Real> y = fake.detach(true);
    const auto fake_out = discriminators_.forward(y);
    std::map<std::string, Tensor<Real>> terms;
    terms["mel"] = mel_loss(batch.audio, y, frontend_);
    terms["adv_g"] = adv_loss_g(fake_out);
    terms["fm"] = fm_loss(real_out, fake_out);
    terms["msstft"] = msstft_loss(batch.audio, y, resolutions);
    report.mel = terms["mel"].item();
    report.adv_g = terms["adv_g"].item();
    report.fm = terms["fm"].item();
    report.msstft = terms["msstft"].item();
    report.adv_g_per_sub = adv_g_breakdown(fake_out);
    if (!report.all_finite()) {
      last_ = report;
      throw NumericError("non-finite generator loss at step " + std::to_string(step_) + ": " + report.to_json_line());
    }
    std::vector<Tensor<Real>> losses;
    for (const auto& n : tc.balancer.names) losses.push_back(terms.at(n));
    const auto injected = balancer_.balance(std::span<const Tensor<Real>>(losses), y);
    report.balancer_norms = balancer_.realized_norms();
    backward_from(fake, std::span<const Real>(injected), std::span<const Tensor<Real>>(g_params));
    report.grad_scale_g = clip_global_norm(std::span<Tensor<Real>>(g_params), tc.clip_norm);
    opt_g_.step();
  }
  ++step_;
  last_ = report;
  return report;
}

template <typename Real>
void Trainer<Real>::save(const std::string& path) const {
  std::vector<StoredTensor> tensors;
  for (const auto& e : generator_.parameters().entries()) {
    tensors.push_back(store<Real>("g." + e.name, e.tensor.data(), e.tensor.shape()));
  }
  for (const auto& e : discriminators_.parameters().entries()) {
    tensors.push_back(store<Real>("d." + e.name, e.tensor.data(), e.tensor.shape()));
  }
  auto& self = const_cast<Trainer&>(*this);
  append_moments(tensors, "opt_g", self.opt_g_);
  append_moments(tensors, "opt_d", self.opt_d_);
  write_container(path, tensors);

  nlohmann::json side;
  side["format"] = "EVAC";
  side["version"] = kCheckpointVersion;
  side["step"] = step_;
  side["lr"] = lr_at(step_, config_.train);
  side["opt_g_steps"] = opt_g_.steps();
  side["opt_d_steps"] = opt_d_.steps();
  side["balancer"] = balancer_.to_json();
  side["rng"] = {{"sampling", rng_text(sample_rng_)}, {"drop_path", rng_text(drop_rng_)}};
  side["config_hash"] = architecture_hash(config_);
  side["config"] = to_json(config_);
  side["precision"] = sizeof(Real) == 4 ? "f32" : "f64";
  const auto side_path = sidecar_path(path);
  std::ofstream out(side_path);
  out << side.dump(2) << "\n";
  if (!out) throw FormatError(side_path + ": write failed");
}

template <typename Real>
void Trainer<Real>::load(const std::string& path) {
  const auto stored = read_container(path);
  std::ifstream in(sidecar_path(path));
  if (!in) throw FormatError(sidecar_path(path) + ": missing checkpoint sidecar");
  nlohmann::json side;
  try {
    in >> side;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(sidecar_path(path) + ": " + e.what());
  }
  if (side.value("version", 0u) != kCheckpointVersion) throw FormatError(sidecar_path(path) + ": version mismatch");
  if (side.at("config_hash").get<std::string>() != architecture_hash(config_)) {
    throw FormatError(path + ": checkpoint architecture does not match the configuration");
  }
  load_parameters(generator_.parameters(), stored, "g.");
  load_parameters(discriminators_.parameters(), stored, "d.");
  restore_moments(stored, "opt_g", opt_g_);
  restore_moments(stored, "opt_d", opt_d_);
  opt_g_.set_steps(side.at("opt_g_steps").get<std::int64_t>());
  opt_d_.set_steps(side.at("opt_d_steps").get<std::int64_t>());
  balancer_.load_json(side.at("balancer"));
  rng_restore(sample_rng_, side.at("rng").at("sampling").get<std::string>());
  rng_restore(drop_rng_, side.at("rng").at("drop_path").get<std::string>());
  step_ = side.at("step").get<std::int64_t>();
}

template <typename Real>
Generator<Real> load_generator(const std::string& path, RunConfig* config_out) {
  std::ifstream in(sidecar_path(path));
  if (!in) throw FormatError(sidecar_path(path) + ": missing checkpoint sidecar");
  nlohmann::json side;
  try {
    in >> side;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(sidecar_path(path) + ": " + e.what());
  }
  const RunConfig cfg = run_config_from_json(side.at("config"));
  const auto stored = read_container(path);
  Generator<Real> g(cfg.generator, 0);
  load_parameters(g.parameters(), stored, "g.");
  if (config_out) *config_out = cfg;
  return g;
}

template class Trainer<float>;
template class Trainer<double>;
template Generator<float> load_generator<float>(const std::string&, RunConfig*);
template Generator<double> load_generator<double>(const std::string&, RunConfig*);

}  // namespace eva
