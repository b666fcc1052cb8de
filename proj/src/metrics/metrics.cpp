#include "eva/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "eva/config.hpp"
#include "eva/discriminators.hpp"
#include "eva/io.hpp"

namespace eva {

std::vector<Resolution> default_resolutions() {
  const auto r = DiscriminatorConfig{}.mrd_resolutions;
  return {r.begin(), r.end()};
}

double mstft_distance(const AudioBuffer& ref, const AudioBuffer& gen, const std::vector<Resolution>& resolutions) {
  if (ref.sample_rate != gen.sample_rate) throw std::invalid_argument("mstft_distance: sample rates differ");
  const auto n = static_cast<std::int64_t>(ref.samples.size());
  std::vector<double> g(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t i = 0; i < n && i < static_cast<std::int64_t>(gen.samples.size()); ++i) g[i] = gen.samples[i];
  NoGradGuard guard;
  Tensor<double> x(Shape{1, n}, std::vector<double>(ref.samples.begin(), ref.samples.end()));
  Tensor<double> y(Shape{1, n}, std::move(g));
  return msstft_loss(x, y, resolutions).item();
}

PitchTrack track_pitch(const AudioBuffer& audio, const PitchOptions& opt) {
  const int sr = audio.sample_rate;
  PitchTrack track;
  track.sample_rate = sr;
  track.frame = std::max(4, static_cast<int>(std::lround(opt.frame_44k * sr / 44100.0)));
  track.hop = std::max(1, static_cast<int>(std::lround(opt.hop_44k * sr / 44100.0)));
  const auto& x = audio.samples;
  const std::int64_t len = static_cast<std::int64_t>(x.size());
  if (len < track.frame) throw std::invalid_argument("track_pitch: audio shorter than one analysis frame");
  const int lag_min = std::max(1, static_cast<int>(std::floor(sr / opt.f0_max)));
  const int lag_max = std::min(track.frame - 1, static_cast<int>(std::ceil(sr / opt.f0_min)));
  const std::int64_t frames = 1 + (len - track.frame) / track.hop;
  const int w = track.frame;
  std::vector<double> r(static_cast<std::size_t>(lag_max + 2), 0.0);
  for (std::int64_t f = 0; f < frames; ++f) {
    const float* s = x.data() + f * track.hop;
    double energy = 0;
    for (int n = 0; n < w; ++n) energy += static_cast<double>(s[n]) * s[n];
    const double rms = std::sqrt(energy / w);
    double peak = 0;
    int best_lag = 0;
    if (rms > opt.rms_gate) {
      // Normalized cross-correlation of the two overlapping segments.
      for (int lag = lag_min; lag <= lag_max + 1 && lag < w; ++lag) {
        double num = 0, e0 = 0, e1 = 0;
        for (int n = 0; n + lag < w; ++n) {
          num += static_cast<double>(s[n]) * s[n + lag];
          e0 += static_cast<double>(s[n]) * s[n];
          e1 += static_cast<double>(s[n + lag]) * s[n + lag];
        }
        r[lag] = e0 > 0 && e1 > 0 ? num / std::sqrt(e0 * e1) : 0.0;
      }
      for (int lag = lag_min; lag <= lag_max; ++lag) peak = std::max(peak, r[lag]);
      // Earliest local maximum close to the global one, which avoids picking
      // a multiple of the period.
      for (int lag = lag_min; lag <= lag_max; ++lag) {
        const bool local = (lag == lag_min || r[lag] >= r[lag - 1]) && r[lag] >= r[lag + 1];
        if (local && r[lag] >= 0.95 * peak && r[lag] > 0) {
          best_lag = lag;
          break;
        }
      }
    }
    const double periodicity = std::clamp(peak, 0.0, 1.0);
    const bool voiced = rms > opt.rms_gate && periodicity > opt.voicing_threshold && best_lag > 0;
    double f0 = 0;
    if (voiced) {
      double lag = best_lag;
      if (best_lag > lag_min && best_lag < lag_max) {
        const double a = r[best_lag - 1], b = r[best_lag], c = r[best_lag + 1];
        const double denom = a - 2 * b + c;
        if (denom < 0) lag += 0.5 * (a - c) / denom;
      }
      f0 = std::clamp(sr / lag, opt.f0_min, opt.f0_max);
    }
    track.f0.push_back(f0);
    track.periodicity.push_back(periodicity);
    track.voiced.push_back(voiced);
  }
  return track;
}

double periodicity_error(const PitchTrack& ref, const PitchTrack& gen) {
  if (ref.size() != gen.size()) {
    throw std::invalid_argument("periodicity_error: " + std::to_string(ref.size()) + " vs " +
                                std::to_string(gen.size()) + " frames");
  }
  if (ref.size() == 0) return 0.0;
  double acc = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double d = ref.periodicity[i] - gen.periodicity[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(ref.size()));
}

F1Result vuv_f1(const PitchTrack& ref, const PitchTrack& gen) {
  if (ref.size() != gen.size()) throw std::invalid_argument("vuv_f1: frame counts differ");
  F1Result r;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (ref.voiced[i] && gen.voiced[i]) ++r.tp;
    if (!ref.voiced[i] && gen.voiced[i]) ++r.fp;
    if (ref.voiced[i] && !gen.voiced[i]) ++r.fn;
  }
  const std::int64_t denom = 2 * r.tp + r.fp + r.fn;
  if (denom == 0) {
    r.f1 = 1.0;
    r.undefined = true;
  } else {
    r.f1 = 2.0 * static_cast<double>(r.tp) / static_cast<double>(denom);
  }
  return r;
}

SmosAggregate smos_aggregate(const std::vector<int>& scores) {
  if (scores.empty()) throw std::invalid_argument("smos_aggregate: no ratings");
  SmosAggregate a;
  a.count = static_cast<std::int64_t>(scores.size());
  double sum = 0;
  for (int s : scores) {
    if (s < 1 || s > 5) throw std::invalid_argument("smos_aggregate: score " + std::to_string(s) + " outside 1..5");
    sum += s;
  }
  a.mean = sum / static_cast<double>(a.count);
  if (a.count > 1) {
    double ss = 0;
    for (int s : scores) ss += (s - a.mean) * (s - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(a.count - 1));
  }
  a.ci95 = 1.96 * a.stddev / std::sqrt(static_cast<double>(a.count));
  return a;
}

std::vector<std::pair<std::string, std::string>> read_pair_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open manifest");
  const auto base = std::filesystem::path(path).parent_path();
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  int lineno = 0;
  auto resolve = [&](const std::string& p) {
    return std::filesystem::path(p).is_relative() ? (base / p).string() : p;
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream s(line);
    std::string a, b, extra;
    if (!(s >> a)) continue;
    if (!(s >> b)) throw FormatError(path + ": line " + std::to_string(lineno) + ": expected two paths");
    pairs.emplace_back(resolve(a), resolve(b));
  }
  return pairs;
}

EvalReport evaluate_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
  EvalReport report;
  report.per_file.resize(pairs.size());
  std::string manifest_text;
  for (const auto& [a, b] : pairs) manifest_text += a + "\t" + b + "\n";
  report.manifest_hash = hex64(fnv1a64(manifest_text));
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto& e = report.per_file[i];
    e.ref_path = pairs[i].first;
    e.gen_path = pairs[i].second;
    const auto ref = wav_read(e.ref_path);
    auto gen = wav_read(e.gen_path);
    if (gen.sample_rate != ref.sample_rate) throw FormatError(e.gen_path + ": sample rate differs from reference");
    gen.samples.resize(ref.samples.size(), 0.0f);
    e.mstft = mstft_distance(ref, gen);
    const auto pr = track_pitch(ref), pg = track_pitch(gen);
    e.periodicity_error = periodicity_error(pr, pg);
    const auto f1 = vuv_f1(pr, pg);
    e.vuv_f1 = f1.f1;
    e.vuv_undefined = f1.undefined;
  }
  if (!pairs.empty()) {
    for (const auto& e : report.per_file) {
      report.mstft += e.mstft;
      report.periodicity_error += e.periodicity_error;
      report.vuv_f1 += e.vuv_f1;
    }
    const double n = static_cast<double>(pairs.size());
    report.mstft /= n;
    report.periodicity_error /= n;
    report.vuv_f1 /= n;
  }
  return report;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json files = nlohmann::json::array();
  for (const auto& e : per_file) {
    files.push_back({{"ref", e.ref_path},
                     {"gen", e.gen_path},
                     {"mstft", e.mstft},
                     {"periodicity_error", e.periodicity_error},
                     {"vuv_f1", e.vuv_f1},
                     {"vuv_f1_undefined", e.vuv_undefined}});
  }
  nlohmann::json res = nlohmann::json::array();
  for (const auto& r : default_resolutions()) res.push_back({r[0], r[1], r[2]});
  return {{"config",
           {{"note",
             "pitch metrics use a normalized-autocorrelation tracker in place of a learned pitch model; "
             "absolute values are not comparable with published CREPE-based numbers"},
            {"resolutions", res},
            {"pitch", {{"f0_min", 50.0}, {"f0_max", 1000.0}, {"frame_44k", 1024}, {"hop_44k", 256}}},
            {"manifest_hash", manifest_hash}}},
          {"per_file", files},
          {"aggregate",
           {{"mstft", mstft}, {"periodicity_error", periodicity_error}, {"vuv_f1", vuv_f1}, {"files", per_file.size()}}}};
}

}  // namespace eva
