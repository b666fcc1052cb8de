#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "eva/signal.hpp"

namespace eva::testing {

inline AudioBuffer sine(int sample_rate, double hz, double seconds, double amplitude = 0.5, double noise = 0.0,
                        std::uint64_t seed = 1) {
  AudioBuffer a;
  a.sample_rate = sample_rate;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  const auto n = static_cast<std::size_t>(std::lround(seconds * sample_rate));
  a.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    a.samples[i] = static_cast<float>(amplitude * std::sin(2 * M_PI * hz * static_cast<double>(i) / sample_rate) +
                                      noise * nd(rng));
  }
  return a;
}

/// The overfit fixture: 0.5 s of a 440 Hz sine plus quiet noise at 8 kHz.
inline AudioBuffer overfit_fixture() { return sine(8000, 440.0, 0.5, 0.5, 0.003, 5); }

/// Fresh empty directory under the system temp folder.
inline std::string temp_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("evagan_" + tag + "_" + std::to_string(std::random_device{}()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace eva::testing
