#include <algorithm>
#include <filesystem>
#include <stdexcept>

#include "eva/io.hpp"
#include "eva/ops.hpp"
#include "eva/train.hpp"

namespace eva {

Dataset Dataset::from_dirs(const std::vector<DataDir>& dirs, int sample_rate) {
  Dataset data;
  for (const auto& d : dirs) {
    if (!std::filesystem::is_directory(d.path)) throw FormatError(d.path + ": not a directory");
    std::vector<std::string> paths;
    for (const auto& entry : std::filesystem::directory_iterator(d.path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".wav") paths.push_back(entry.path().string());
    }
    std::sort(paths.begin(), paths.end());
    DataSource src;
    src.name = d.path;
    src.weight = d.weight;
    for (const auto& p : paths) {
      auto audio = wav_read(p);
      if (audio.sample_rate != sample_rate) {
        throw FormatError(p + ": sample rate " + std::to_string(audio.sample_rate) + " Hz, expected " +
                          std::to_string(sample_rate));
      }
      src.files.push_back(std::move(audio));
    }
    if (src.files.empty()) throw FormatError(d.path + ": no .wav files");
    data.sources.push_back(std::move(src));
  }
  return data;
}

bool Dataset::empty() const {
  return std::all_of(sources.begin(), sources.end(), [](const auto& s) { return s.files.empty(); });
}

std::size_t sample_source(const Dataset& data, std::mt19937_64& rng) {
  double total = 0;
  for (const auto& s : data.sources) total += s.files.empty() ? 0.0 : s.weight;
  if (!(total > 0)) throw std::invalid_argument("dataset is empty");
  double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  for (std::size_t i = 0; i < data.sources.size(); ++i) {
    if (data.sources[i].files.empty()) continue;
    if (u < data.sources[i].weight) return i;
    u -= data.sources[i].weight;
  }
  for (std::size_t i = data.sources.size(); i-- > 0;) {
    if (!data.sources[i].files.empty()) return i;
  }
  throw std::invalid_argument("dataset is empty");
}

namespace {

// Mirror index with period 2(n-1), edges not repeated.
std::size_t mirror(std::int64_t t, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  std::int64_t u = t % period;
  if (u < 0) u += period;
  return static_cast<std::size_t>(u < n ? u : period - u);
}

}  // namespace

template <typename Real>
Batch<Real> sample_batch(const Dataset& data, int batch_size, int segment_frames, const MelFrontend<Real>& frontend,
                         std::mt19937_64& rng) {
  if (data.empty()) throw std::invalid_argument("sample_batch: dataset is empty");
  const std::int64_t seg = static_cast<std::int64_t>(segment_frames) * frontend.config().hop_length;
  Batch<Real> b;
  std::vector<Real> audio(static_cast<std::size_t>(batch_size * seg));
  for (int i = 0; i < batch_size; ++i) {
    const std::size_t s = sample_source(data, rng);
    const auto& files = data.sources[s].files;
    const std::size_t f = std::uniform_int_distribution<std::size_t>(0, files.size() - 1)(rng);
    const auto& x = files[f].samples;
    const std::int64_t n = static_cast<std::int64_t>(x.size());
    Real* dst = audio.data() + i * seg;
    if (n >= seg) {
      const std::int64_t start = std::uniform_int_distribution<std::int64_t>(0, n - seg)(rng);
      for (std::int64_t t = 0; t < seg; ++t) dst[t] = static_cast<Real>(x[start + t]);
    } else {
      for (std::int64_t t = 0; t < seg; ++t) dst[t] = static_cast<Real>(x[mirror(t, n)]);
    }
    b.source_index.push_back(s);
  }
  b.audio = Tensor<Real>(Shape{batch_size, 1, seg}, std::move(audio));
  NoGradGuard guard;
  b.mel = frontend(reshape(b.audio, Shape{batch_size, seg})).detach();
  return b;
}

template Batch<float> sample_batch<float>(const Dataset&, int, int, const MelFrontend<float>&, std::mt19937_64&);
template Batch<double> sample_batch<double>(const Dataset&, int, int, const MelFrontend<double>&, std::mt19937_64&);

}  // namespace eva
