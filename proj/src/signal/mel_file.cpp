#include <cstring>
#include <fstream>
#include <stdexcept>

#include "eva/io.hpp"
#include "eva/signal.hpp"

namespace eva {

namespace {
constexpr char kMagic[4] = {'E', 'V', 'A', 'M'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void write_mel(const std::string& path, const MelSpec& mel) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  const auto& c = mel.config;
  out.write(kMagic, 4);
  le::put_u32(out, kVersion);
  le::put_u32(out, static_cast<std::uint32_t>(c.sample_rate));
  le::put_u32(out, static_cast<std::uint32_t>(c.n_fft));
  le::put_u32(out, static_cast<std::uint32_t>(c.hop_length));
  le::put_u32(out, static_cast<std::uint32_t>(c.win_length));
  le::put_u32(out, static_cast<std::uint32_t>(c.mel_bins));
  le::put_f64(out, c.fmin);
  le::put_f64(out, c.fmax);
  le::put_f64(out, c.log_floor);
  le::put_u32(out, c.scale == MelScale::htk ? 0u : 1u);
  le::put_u32(out, static_cast<std::uint32_t>(mel.frames));
  for (float v : mel.values) le::put_f32(out, v);
  if (!out) throw FormatError(path + ": write failed");
}

MelSpec read_mel(const std::string& path) {
  le::Reader in(path);
  char magic[4];
  in.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path + ": not an EVAM mel file");
  const auto version = in.u32("version");
  if (version != kVersion) {
    throw FormatError(path + ": unsupported EVAM version " + std::to_string(version));
  }
  MelSpec mel;
  auto& c = mel.config;
  c.sample_rate = static_cast<int>(in.u32("sample_rate"));
  c.n_fft = static_cast<int>(in.u32("n_fft"));
  c.hop_length = static_cast<int>(in.u32("hop_length"));
  c.win_length = static_cast<int>(in.u32("win_length"));
  c.mel_bins = static_cast<int>(in.u32("mel_bins"));
  c.fmin = in.f64("fmin");
  c.fmax = in.f64("fmax");
  c.log_floor = in.f64("log_floor");
  c.scale = in.u32("scale") == 0 ? MelScale::htk : MelScale::slaney;
  mel.frames = in.u32("frames");
  c.validate();
  mel.values.resize(static_cast<std::size_t>(mel.frames * c.mel_bins));
  for (auto& v : mel.values) v = in.f32("values");
  return mel;
}

}  // namespace eva
