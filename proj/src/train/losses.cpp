#include "eva/losses.hpp"

#include <cmath>
#include <json.hpp>

#include "eva/ops.hpp"

namespace eva {

namespace {

constexpr double kLogMagFloor = 1e-7;

template <typename Real>
Tensor<Real> as_rows(const Tensor<Real>& a) {
  if (a.rank() == 3 && a.dim(1) == 1) return reshape(a, Shape{a.dim(0), a.dim(2)});
  if (a.rank() == 1) return reshape(a, Shape{1, a.dim(0)});
  return a;
}

template <typename Real>
Tensor<Real> mean_of(std::vector<Tensor<Real>>& terms) {
  if (terms.empty()) throw DimensionError("loss: no sub-discriminators");
  if (terms.size() == 1) return terms[0];
  return scale(add_n(std::span<const Tensor<Real>>(terms)), 1.0 / static_cast<double>(terms.size()));
}

template <typename Real>
void require_aligned(const DiscriminatorOutput<Real>& a, const DiscriminatorOutput<Real>& b) {
  if (a.size() != b.size()) {
    throw DimensionError("loss: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                         " sub-discriminators");
  }
}

}  // namespace

template <typename Real>
Tensor<Real> mel_loss(const Tensor<Real>& x, const Tensor<Real>& g, const MelFrontend<Real>& frontend) {
  const auto xr = as_rows(x), gr = as_rows(g);
  if (xr.shape() != gr.shape()) {
    throw DimensionError("mel_loss: reference " + shape_string(x.shape()) + " vs generated " +
                         shape_string(g.shape()));
  }
  return reduce(sub(frontend(xr), frontend(gr)), Reduction::mean_abs);
}

template <typename Real>
Tensor<Real> adv_loss_g(const DiscriminatorOutput<Real>& fake) {
  std::vector<Tensor<Real>> terms;
  for (const auto& l : fake.logits) terms.push_back(reduce(add_scalar(l, -1.0), Reduction::mean_sq));
  return mean_of(terms);
}

template <typename Real>
Tensor<Real> fm_loss(const DiscriminatorOutput<Real>& real, const DiscriminatorOutput<Real>& fake) {
  require_aligned(real, fake);
  std::vector<Tensor<Real>> per_sub;
  for (std::size_t i = 0; i < real.size(); ++i) {
    if (real.features[i].size() != fake.features[i].size()) {
      throw DimensionError("fm_loss: sub-discriminator " + std::to_string(i) + " layer counts differ");
    }
    std::vector<Tensor<Real>> layers;
    for (std::size_t l = 0; l < real.features[i].size(); ++l) {
      layers.push_back(reduce(sub(real.features[i][l].detach(), fake.features[i][l]), Reduction::mean_abs));
    }
    per_sub.push_back(layers.size() == 1 ? layers[0] : add_n(std::span<const Tensor<Real>>(layers)));
  }
  return mean_of(per_sub);
}

template <typename Real>
Tensor<Real> adv_loss_d(const DiscriminatorOutput<Real>& real, const DiscriminatorOutput<Real>& fake) {
  require_aligned(real, fake);
  std::vector<Tensor<Real>> terms;
  for (std::size_t i = 0; i < real.size(); ++i) {
    terms.push_back(add(reduce(add_scalar(real.logits[i], -1.0), Reduction::mean_sq),
                        reduce(fake.logits[i], Reduction::mean_sq)));
  }
  return mean_of(terms);
}

template <typename Real>
Tensor<Real> msstft_loss(const Tensor<Real>& x, const Tensor<Real>& g, const std::vector<Resolution>& resolutions) {
  const auto xr = as_rows(x), gr = as_rows(g);
  if (xr.shape() != gr.shape()) {
    throw DimensionError("msstft_loss: reference " + shape_string(x.shape()) + " vs generated " +
                         shape_string(g.shape()));
  }
  std::vector<Tensor<Real>> terms;
  for (const auto& [n_fft, hop, win] : resolutions) {
    const auto mx = stft_magnitude(xr, n_fft, hop, win, true);
    const auto mg = stft_magnitude(gr, n_fft, hop, win, true);
    const auto denom = l2_norm(mx);
    if (!(denom.item() > 0)) throw NumericError("msstft_loss: reference spectrogram is all zero");
    const auto sc = div(l2_norm(sub(mx, mg)), denom);
    const auto logmag =
        reduce(sub(log_clamped(mx, kLogMagFloor), log_clamped(mg, kLogMagFloor)), Reduction::mean_abs);
    terms.push_back(add(sc, logmag));
  }
  return mean_of(terms);
}

template <typename Real>
std::map<std::string, double> adv_g_breakdown(const DiscriminatorOutput<Real>& fake) {
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < fake.size(); ++i) {
    double acc = 0;
    for (Real v : fake.logits[i].data()) acc += (v - 1.0) * (v - 1.0);
    out[fake.names[i]] = acc / static_cast<double>(fake.logits[i].numel());
  }
  return out;
}

template <typename Real>
std::map<std::string, double> adv_d_breakdown(const DiscriminatorOutput<Real>& real,
                                              const DiscriminatorOutput<Real>& fake) {
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < real.size(); ++i) {
    double r = 0, f = 0;
    for (Real v : real.logits[i].data()) r += (v - 1.0) * (v - 1.0);
    for (Real v : fake.logits[i].data()) f += static_cast<double>(v) * v;
    out[real.names[i]] = r / static_cast<double>(real.logits[i].numel()) +
                         f / static_cast<double>(fake.logits[i].numel());
  }
  return out;
}

std::string LossReport::to_json_line() const {
  nlohmann::json j;
  j["step"] = step;
  j["mel"] = mel;
  j["adv_g"] = adv_g;
  j["fm"] = fm;
  j["msstft"] = msstft;
  j["adv_d"] = adv_d;
  j["lr"] = lr;
  j["grad_scale_g"] = grad_scale_g;
  j["grad_scale_d"] = grad_scale_d;
  j["adv_g_per_sub"] = adv_g_per_sub;
  j["adv_d_per_sub"] = adv_d_per_sub;
  j["balancer_norms"] = balancer_norms;
  return j.dump();
}

bool LossReport::all_finite() const {
  return std::isfinite(mel) && std::isfinite(adv_g) && std::isfinite(fm) && std::isfinite(msstft) &&
         std::isfinite(adv_d);
}

#define EVA_INSTANTIATE(Real)                                                                              \
  template Tensor<Real> mel_loss(const Tensor<Real>&, const Tensor<Real>&, const MelFrontend<Real>&);      \
  template Tensor<Real> adv_loss_g(const DiscriminatorOutput<Real>&);                                      \
  template Tensor<Real> fm_loss(const DiscriminatorOutput<Real>&, const DiscriminatorOutput<Real>&);       \
  template Tensor<Real> adv_loss_d(const DiscriminatorOutput<Real>&, const DiscriminatorOutput<Real>&);    \
  template Tensor<Real> msstft_loss(const Tensor<Real>&, const Tensor<Real>&, const std::vector<Resolution>&); \
  template std::map<std::string, double> adv_g_breakdown(const DiscriminatorOutput<Real>&);                \
  template std::map<std::string, double> adv_d_breakdown(const DiscriminatorOutput<Real>&,                 \
                                                         const DiscriminatorOutput<Real>&);

EVA_INSTANTIATE(float)
EVA_INSTANTIATE(double)
#undef EVA_INSTANTIATE

}  // namespace eva
