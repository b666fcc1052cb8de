#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "eva/io.hpp"

namespace eva {

namespace le {

void put_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }

void put_u16(std::ostream& out, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(b, 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

void put_f64(std::ostream& out, double v) {
  const auto u = std::bit_cast<std::uint64_t>(v);
  put_u32(out, static_cast<std::uint32_t>(u & 0xffffffffu));
  put_u32(out, static_cast<std::uint32_t>(u >> 32));
}

Reader::Reader(const std::string& path) : name_(path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  data_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

Reader::Reader(std::string name, std::vector<char> bytes) : name_(std::move(name)), data_(std::move(bytes)) {}

void Reader::bytes(void* dst, std::size_t n, const char* what) {
  if (pos_ + n > data_.size()) {
    throw FormatError(name_ + ": truncated at offset " + std::to_string(pos_) + " reading " + what + " (" +
                      std::to_string(n) + " bytes needed, " + std::to_string(data_.size() - pos_) + " left)");
  }
  std::memcpy(dst, data_.data() + pos_, n);
  pos_ += n;
}

void Reader::skip(std::size_t n, const char* what) {
  if (pos_ + n > data_.size()) {
    throw FormatError(name_ + ": truncated at offset " + std::to_string(pos_) + " skipping " + what);
  }
  pos_ += n;
}

std::uint8_t Reader::u8(const char* what) {
  std::uint8_t b;
  bytes(&b, 1, what);
  return b;
}

std::uint16_t Reader::u16(const char* what) {
  unsigned char b[2];
  bytes(b, 2, what);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t Reader::u32(const char* what) {
  unsigned char b[4];
  bytes(b, 4, what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float Reader::f32(const char* what) { return std::bit_cast<float>(u32(what)); }

double Reader::f64(const char* what) {
  const std::uint64_t lo = u32(what);
  const std::uint64_t hi = u32(what);
  return std::bit_cast<double>(lo | (hi << 32));
}

}  // namespace le

AudioBuffer wav_read(const std::string& path, WavInfo* info) {
  le::Reader in(path);
  char tag[4];
  in.bytes(tag, 4, "RIFF tag");
  if (std::memcmp(tag, "RIFF", 4) != 0) throw FormatError(path + ": offset 0: not a RIFF file");
  in.u32("RIFF size");
  in.bytes(tag, 4, "WAVE tag");
  if (std::memcmp(tag, "WAVE", 4) != 0) throw FormatError(path + ": offset 8: not a WAVE file");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0, block_align = 0;
  std::uint32_t rate = 0;
  while (!in.at_end()) {
    const std::size_t chunk_at = in.offset();
    in.bytes(tag, 4, "chunk id");
    const std::uint32_t size = in.u32("chunk size");
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError(path + ": offset " + std::to_string(chunk_at) + ": fmt chunk too small");
      format = in.u16("audio format");
      channels = in.u16("channel count");
      rate = in.u32("sample rate");
      in.u32("byte rate");
      block_align = in.u16("block align");
      bits = in.u16("bits per sample");
      if (format == 0xFFFE && size >= 40) {
        in.skip(8, "extensible header");
        format = in.u16("subformat");
        in.skip(size - 26, "extensible guid");
      } else {
        in.skip(size - 16, "fmt extension");
      }
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw FormatError(path + ": offset " + std::to_string(chunk_at) + ": data before fmt chunk");
      const bool pcm16 = format == 1 && bits == 16;
      const bool f32 = format == 3 && bits == 32;
      if (!pcm16 && !f32) {
        throw FormatError(path + ": unsupported format " + std::to_string(format) + " with " +
                          std::to_string(bits) + " bits (need PCM16 or float32)");
      }
      if (channels == 0 || block_align != channels * bits / 8) {
        throw FormatError(path + ": inconsistent block align");
      }
      if (in.offset() + size > in.size()) {
        throw FormatError(path + ": truncated at offset " + std::to_string(in.size()) + ": data chunk declares " +
                          std::to_string(size) + " bytes");
      }
      const std::size_t frames = size / block_align;
      AudioBuffer audio;
      audio.sample_rate = static_cast<int>(rate);
      audio.samples.resize(frames);
      for (std::size_t t = 0; t < frames; ++t) {
        for (int c = 0; c < channels; ++c) {
          const float v = pcm16 ? static_cast<float>(static_cast<std::int16_t>(in.u16("sample")) / 32768.0)
                                : in.f32("sample");
          if (c == 0) audio.samples[t] = v;
        }
      }
      if (info) *info = WavInfo{channels, bits, f32};
      if (audio.samples.empty()) throw FormatError(path + ": no samples");
      return audio;
    } else {
      in.skip(size + (size & 1u), "chunk body");
    }
  }
  throw FormatError(path + ": truncated at offset " + std::to_string(in.size()) + ": no data chunk");
}

void wav_write(const std::string& path, const AudioBuffer& audio, WavFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  const bool f32 = format == WavFormat::float32;
  const std::uint16_t bits = f32 ? 32 : 16;
  const std::uint16_t block = bits / 8;
  const auto data_size = static_cast<std::uint32_t>(audio.samples.size() * block);
  out.write("RIFF", 4);
  le::put_u32(out, 36 + data_size);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  le::put_u32(out, 16);
  le::put_u16(out, f32 ? 3 : 1);
  le::put_u16(out, 1);
  le::put_u32(out, static_cast<std::uint32_t>(audio.sample_rate));
  le::put_u32(out, static_cast<std::uint32_t>(audio.sample_rate) * block);
  le::put_u16(out, block);
  le::put_u16(out, bits);
  out.write("data", 4);
  le::put_u32(out, data_size);
  for (float s : audio.samples) {
    if (f32) {
      le::put_f32(out, s);
    } else {
      const double q = std::round(std::clamp(static_cast<double>(s), -1.0, 1.0) * 32768.0);
      le::put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0))));
    }
  }
  if (!out) throw FormatError(path + ": write failed");
}

}  // namespace eva
