#pragma once

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "eva/signal.hpp"

namespace eva {

/// Malformed or unreadable data file (CLI exit code 2).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace le {

void put_u8(std::ostream& out, std::uint8_t v);
void put_u16(std::ostream& out, std::uint16_t v);
void put_u32(std::ostream& out, std::uint32_t v);
void put_f32(std::ostream& out, float v);
void put_f64(std::ostream& out, double v);

/// Little-endian reader over a whole file; errors name the byte offset.
class Reader {
 public:
  explicit Reader(const std::string& path);
  Reader(std::string name, std::vector<char> bytes);

  void bytes(void* dst, std::size_t n, const char* what);
  std::uint8_t u8(const char* what);
  std::uint16_t u16(const char* what);
  std::uint32_t u32(const char* what);
  float f32(const char* what);
  double f64(const char* what);
  void skip(std::size_t n, const char* what);

  std::size_t offset() const { return pos_; }
  std::size_t size() const { return data_.size(); }
  bool at_end() const { return pos_ == data_.size(); }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  std::vector<char> data_;
  std::size_t pos_ = 0;
};

}  // namespace le

enum class WavFormat { pcm16, float32 };

struct WavInfo {
  int channels = 1;
  int bits = 16;
  bool is_float = false;
};

/// Reads PCM16 or IEEE float32 RIFF/WAVE. Multi-channel input keeps the first
/// channel; `info` (optional) reports the original layout.
AudioBuffer wav_read(const std::string& path, WavInfo* info = nullptr);
void wav_write(const std::string& path, const AudioBuffer& audio, WavFormat format = WavFormat::pcm16);

}  // namespace eva
