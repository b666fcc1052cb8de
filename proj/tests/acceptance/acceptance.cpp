// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failures. Pass substrings as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eva/autograd.hpp"
#include "eva/balancer.hpp"
#include "eva/cli.hpp"
#include "eva/config.hpp"
#include "eva/discriminators.hpp"
#include "eva/generator.hpp"
#include "eva/io.hpp"
#include "eva/kernels.hpp"
#include "eva/losses.hpp"
#include "eva/metrics.hpp"
#include "eva/ops.hpp"
#include "eva/train.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"

using namespace eva;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances.
constexpr double kGradTol = 1e-4;
constexpr double kGradBudgetSeconds = 60;
constexpr double kParamTol = 0.10;
constexpr double kBalancerTol = 1e-6;
constexpr double kResumeF32Tol = 1e-6;
constexpr double kPitchTolHz = 1.0;
constexpr double kRoundTripTol = 1e-5;
constexpr double kOverfitMelRatio = 0.20;
constexpr double kOverfitSilenceRatio = 0.50;
constexpr double kOverfitBudgetSeconds = 15 * 60;
constexpr int kOverfitSteps = 1500;
constexpr int kDeterminismSteps = 200;

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  failures += !pass;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

template <typename Real>
std::vector<double> flat(const ParameterSet<Real>& p) {
  std::vector<double> out;
  for (const auto& e : p.entries()) out.insert(out.end(), e.tensor.data().begin(), e.tensor.data().end());
  return out;
}

Dataset overfit_data() {
  Dataset d;
  d.sources.push_back({"fixture", 1.0, {testing::overfit_fixture()}});
  return d;
}

void autodiff() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_name;
  int ops = 0, probes = 0;
  const auto saved = kernels::backend();
  for (auto [backend, seed] : {std::pair{kernels::Backend::parallel, 11ull}, {kernels::Backend::reference, 12ull}}) {
    kernels::set_backend(backend);
    for (const auto& r : testing::gradcheck_suite(seed)) {
      ++ops;
      probes += r.probes;
      if (r.max_rel_error >= worst) {
        worst = r.max_rel_error;
        worst_name = r.name;
      }
    }
  }
  kernels::set_backend(saved);
  const double elapsed = seconds_since(t0);
  report("autodiff", worst < kGradTol && elapsed < kGradBudgetSeconds,
         fmt("%d op checks, %d probes, max rel error %.3g (%s) < %.0e, %.1f s < %.0f s", ops, probes, worst,
             worst_name.c_str(), kGradTol, elapsed, kGradBudgetSeconds));
}

void architecture() {
  struct Expect {
    const char* preset;
    double upsampler, cam;  // cam < 0: not checked
  };
  bool pass = true;
  std::ostringstream detail;
  for (const Expect& e : {Expect{"hifigan-base-44k", 13.6e6, -1}, Expect{"evagan-base", 16.3e6, 18.6e6},
                          Expect{"evagan-big", 174.4e6, -1}}) {
    std::ostringstream out, err;
    const int code = cli::run({"params", "--config", std::string(EVA_PRESET_DIR) + "/" + e.preset + ".json"}, out, err);
    if (code != 0) {
      pass = false;
      detail << e.preset << " exit " << code << "; ";
      continue;
    }
    std::cout << out.str();
    std::istringstream lines(out.str());
    std::string line, last;
    while (std::getline(lines, line))
      if (!line.empty()) last = line;
    const auto j = nlohmann::json::parse(last);
    const double up = j.at("upsampler").get<double>(), cam = j.at("cam").get<double>();
    const double du = (up - e.upsampler) / e.upsampler;
    pass = pass && std::abs(du) <= kParamTol;
    detail << e.preset << " upsampler " << fmt("%.1fM (%+.1f%%)", up / 1e6, 100 * du);
    if (e.cam > 0) {
      const double dc = (cam - e.cam) / e.cam;
      pass = pass && std::abs(dc) <= kParamTol;
      detail << " cam " << fmt("%.1fM (%+.1f%%)", cam / 1e6, 100 * dc);
    }
    detail << "; ";
  }
  detail << "tolerance 10%";
  report("architecture constants", pass, detail.str());
}

void length_contract() {
  bool pass = true;
  std::ostringstream detail;
  NoGradGuard guard;
  for (const char* name : {"evagan-base", "evagan-big", "evagan-tiny"}) {
    const auto cfg = GeneratorConfig::preset(name);
    const Generator<float> g(cfg, 7);
    detail << name << " x" << cfg.upsample_factor() << ":";
    for (std::int64_t frames : {1, 7, 256}) {
      std::mt19937_64 rng(static_cast<std::uint64_t>(frames));
      std::normal_distribution<float> nd(-4.0f, 1.0f);
      std::vector<float> v(static_cast<std::size_t>(cfg.mel_bins * frames));
      for (auto& x : v) x = nd(rng);
      const auto y = g.forward(Tensor<float>(Shape{1, cfg.mel_bins, frames}, std::move(v)));
      const bool ok = y.shape() == Shape{1, 1, frames * cfg.upsample_factor()};
      pass = pass && ok;
      detail << " " << frames << "->" << y.shape().back() << (ok ? "" : "(!)");
    }
    detail << "; ";
  }
  report("length contract", pass && GeneratorConfig::evagan_base().upsample_factor() == 512 &&
                                GeneratorConfig::evagan_big().upsample_factor() == 512,
         detail.str());
}

void balancer() {
  BalancerConfig c;
  c.names = {"a", "b", "c", "d"};
  c.weights = {1, 1, 1, 1};
  c.reference_norm = 2.0;
  c.ema_decay = 0.0;
  const std::vector<double> raw = {1e-3, 1e-1, 1e1, 1e3};
  const std::int64_t n = 64;

  // Synthetic losses L_i = s_i * <w_i, y> + q_i * mean(y^2) at a shared output y.
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0, 1);
  std::vector<double> yv(n);
  for (auto& v : yv) v = nd(rng);
  std::vector<Tensor<double>> dirs;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    std::vector<double> w(n);
    for (auto& v : w) v = nd(rng);
    dirs.emplace_back(Shape{n}, std::move(w));
  }
  auto injected = [&](std::size_t scaled, double factor, std::vector<double>* realized) {
    Balancer<double> b(c);
    Tensor<double> y(Shape{n}, yv);
    y.set_requires_grad(true);
    std::vector<Tensor<double>> losses;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const double s = raw[i] * (i == scaled ? factor : 1.0);
      losses.push_back(add(scale(reduce(mul(dirs[i], y), Reduction::sum), s),
                           scale(reduce(mul(y, y), Reduction::mean), 0.1 * s)));
    }
    const auto out = b.balance(losses, y);
    if (realized) {
      realized->clear();
      for (const auto& name : c.names) realized->push_back(b.realized_norms().at(name));
    }
    return out;
  };

  std::vector<double> realized;
  const auto base = injected(raw.size(), 1.0, &realized);
  double worst_share = 0;
  for (double r : realized) worst_share = std::max(worst_share, std::abs(r - c.reference_norm / 4));
  double worst_scale = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto scaled = injected(i, 10.0, nullptr);
    for (std::size_t k = 0; k < base.size(); ++k) {
      worst_scale = std::max(worst_scale, std::abs(scaled[k] - base[k]) / std::max(std::abs(base[k]), 1e-12));
    }
  }
  report("balancer invariant", worst_share < kBalancerTol && worst_scale < kBalancerTol,
         fmt("raw norms 1e-3..1e3, R=2: max |realized - R/4| %.2e; x10 on each loss: max rel change %.2e; tol %.0e",
             worst_share, worst_scale, kBalancerTol));
}

void loss_identities() {
  NoGradGuard guard;
  const auto spectral = SpectralConfig::tiny_8k();
  const MelFrontend<double> fe(spectral);
  const auto audio = testing::overfit_fixture();
  const auto n = static_cast<std::int64_t>(audio.samples.size());
  const Tensor<double> x(Shape{1, 1, n}, std::vector<double>(audio.samples.begin(), audio.samples.end()));
  const double mel = mel_loss(x, x, fe).item();
  const double ms = msstft_loss(x, x, default_resolutions()).item();
  const Discriminators<double> d(DiscriminatorConfig::desk(), 5);
  const auto dx = d.forward(x);
  const double fm = fm_loss(dx, dx).item();

  // Least-squares D loss at its optimum, using the real logit shapes.
  DiscriminatorOutput<double> real = dx, fake = dx;
  for (std::size_t i = 0; i < dx.logits.size(); ++i) {
    real.logits[i] = Tensor<double>(dx.logits[i].shape(), std::vector<double>(dx.logits[i].numel(), 1.0));
    fake.logits[i] = Tensor<double>(dx.logits[i].shape(), std::vector<double>(dx.logits[i].numel(), 0.0));
  }
  const double at_opt = adv_loss_d(real, fake).item();
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> mag(1e-3, 1.0);
  int increased = 0;
  const int points = 21;
  for (int p = 0; p < points; ++p) {
    auto r = real, f = fake;
    auto& side = (p % 2 == 0) ? r : f;
    const auto sub = rng() % side.logits.size();
    auto values = side.logits[sub].data();
    values[rng() % values.size()] += (rng() % 2 ? 1.0 : -1.0) * mag(rng);
    side.logits[sub] = Tensor<double>(side.logits[sub].shape(), std::vector<double>(values.begin(), values.end()));
    increased += adv_loss_d(r, f).item() > at_opt;
  }
  report("loss identities", mel == 0.0 && ms == 0.0 && fm == 0.0 && at_opt == 0.0 && increased == points,
         fmt("mel(x,x)=%g fm(x,x)=%g msstft(x,x)=%g adv_d(1,0)=%g; %d/%d perturbations increase adv_d", mel, fm, ms,
             at_opt, increased, points));
}

void overfit() {
  const auto cfg = RunConfig::preset("evagan-tiny");
  const auto ref = testing::overfit_fixture();
  const auto params = count_parameters(cfg.generator).total();

  const auto t0 = Clock::now();
  Trainer<float> t(cfg, overfit_data());
  std::vector<std::string> prefix;
  std::vector<double> snapshot;
  double mel10 = 0, final_mel = 0;
  for (int s = 1; s <= kOverfitSteps; ++s) {
    const auto r = t.step();
    if (s <= kDeterminismSteps) prefix.push_back(r.to_json_line());
    if (s == kDeterminismSteps) snapshot = flat(t.generator().parameters());
    if (s == 10) mel10 = r.mel;
    if (s % 250 == 0) std::cout << "  overfit step " << s << " mel " << r.mel << std::endl;
    final_mel = r.mel;
  }
  AudioBuffer copy;
  {
    NoGradGuard guard;
    copy = generate(t.generator(), mel_spectrogram(ref, cfg.spectral));
  }
  const double elapsed = seconds_since(t0);
  AudioBuffer silence = ref;
  std::fill(silence.samples.begin(), silence.samples.end(), 0.0f);
  const double d_copy = mstft_distance(ref, copy), d_silence = mstft_distance(ref, silence);

  // Same seed, fresh trainer: the first steps must repeat exactly.
  Trainer<float> again(cfg, overfit_data());
  bool same = true;
  for (int s = 0; s < kDeterminismSteps; ++s) same = same && again.step().to_json_line() == prefix[s];
  same = same && flat(again.generator().parameters()) == snapshot;

  report("tiny overfit", final_mel < kOverfitMelRatio * mel10 && d_copy < kOverfitSilenceRatio * d_silence &&
                             elapsed < kOverfitBudgetSeconds && same,
         fmt("%lld params, %d steps: mel %.4f -> %.4f (%.1f%% of step 10, need < 20%%); mstft copysyn %.3f vs silence "
             "%.3f (%.1f%%, need < 50%%); %.0f s < 900 s; rerun of first %d steps %s",
             static_cast<long long>(params), kOverfitSteps, mel10, final_mel, 100 * final_mel / mel10, d_copy,
             d_silence, 100 * d_copy / d_silence, elapsed, kDeterminismSteps, same ? "identical" : "DIFFERS"));
}

template <typename Real>
std::pair<std::vector<double>, std::vector<double>> resume_pair(const std::string& dir) {
  auto cfg = RunConfig::preset("evagan-tiny");
  cfg.precision = sizeof(Real) == 8 ? Precision::f64 : Precision::f32;
  Trainer<Real> full(cfg, overfit_data());
  for (int i = 0; i < 10; ++i) full.step();
  Trainer<Real> first(cfg, overfit_data());
  for (int i = 0; i < 5; ++i) first.step();
  first.save(dir + "/five.evac");
  Trainer<Real> second(cfg, overfit_data());
  second.load(dir + "/five.evac");
  for (int i = 0; i < 5; ++i) second.step();
  auto a = flat(full.generator().parameters()), b = flat(second.generator().parameters());
  const auto da = flat(full.discriminators().parameters()), db = flat(second.discriminators().parameters());
  a.insert(a.end(), da.begin(), da.end());
  b.insert(b.end(), db.begin(), db.end());
  return {a, b};
}

void resume() {
  const auto dir = testing::temp_dir("acceptance_resume");
  const auto [a64, b64] = resume_pair<double>(dir);
  const auto [a32, b32] = resume_pair<float>(dir);
  double worst = 0;
  for (std::size_t i = 0; i < a32.size(); ++i) {
    worst = std::max(worst, std::abs(a32[i] - b32[i]) / std::max(std::abs(a32[i]), 1e-12));
  }
  fs::remove_all(dir);
  report("resume equivalence", a64 == b64 && worst <= kResumeF32Tol,
         fmt("10 steps vs 5+checkpoint+5 over %zu values: f64 %s, f32 max rel diff %.2e <= %.0e", a64.size(),
             a64 == b64 ? "bitwise equal" : "DIFFERS", worst, kResumeF32Tol));
}

void metrics() {
  const auto dir = testing::temp_dir("acceptance_metrics");
  const auto a = testing::overfit_fixture();
  const auto b = testing::sine(22050, 220.0, 0.5, 0.4, 0.01, 9);
  wav_write(dir + "/a.wav", a, WavFormat::float32);
  wav_write(dir + "/b.wav", b, WavFormat::float32);
  std::ofstream(dir + "/m.txt") << "a.wav a.wav\nb.wav b.wav\n";
  const auto r = evaluate_pairs(read_pair_manifest(dir + "/m.txt"));
  fs::remove_all(dir);

  double worst = 0;
  std::size_t frames = 0, voiced = 0;
  for (int sr : {8000, 44100}) {
    const auto t = track_pitch(sr == 8000 ? a : testing::sine(sr, 440.0, 0.5));
    for (std::size_t i = 0; i < t.size(); ++i) {
      ++frames;
      voiced += t.voiced[i];
      worst = std::max(worst, std::abs(t.f0[i] - 440.0));
    }
  }
  report("metrics self-consistency",
         r.mstft == 0.0 && r.periodicity_error == 0.0 && r.vuv_f1 == 1.0 && voiced == frames && worst <= kPitchTolHz,
         fmt("gen==ref: mstft %g, periodicity %g, vuv_f1 %g; 440 Hz: %zu/%zu frames voiced, max |f0-440| %.3f Hz",
             r.mstft, r.periodicity_error, r.vuv_f1, voiced, frames, worst));
}

void stft_round_trip() {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> nd(0, 1);
  std::uniform_int_distribution<int> len(4000, 20000);
  double worst = 0;
  for (int i = 0; i < 10; ++i) {
    std::vector<double> x(static_cast<std::size_t>(len(rng)));
    for (auto& v : x) v = nd(rng);
    const auto y = istft(stft_complex(x, 2048, 512, 2048));
    if (y.size() != x.size()) {
      worst = INFINITY;
      break;
    }
    for (std::size_t k = 0; k < x.size(); ++k) worst = std::max(worst, std::abs(y[k] - x[k]));
  }
  report("stft round trip", worst < kRoundTripTol,
         fmt("10 random signals, n_fft 2048 hop 512: max abs error %.2e < %.0e", worst, kRoundTripTol));
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<void()>>> checks = {
      {"autodiff", autodiff}, {"architecture", architecture}, {"length", length_contract},
      {"balancer", balancer}, {"loss", loss_identities},      {"overfit", overfit},
      {"resume", resume},     {"metrics", metrics},           {"stft", stft_round_trip}};
  for (const auto& [name, fn] : checks) {
    bool selected = argc == 1;
    for (int i = 1; i < argc; ++i) selected = selected || name.find(argv[i]) != std::string::npos;
    if (!selected) continue;
    try {
      fn();
    } catch (const std::exception& e) {
      report(name, false, std::string("threw: ") + e.what());
    }
  }
  return failures;
}
