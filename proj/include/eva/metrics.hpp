#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "eva/losses.hpp"
#include "eva/signal.hpp"

namespace eva {

/// The shared resolution set used by MRD, msstft and the metric.
std::vector<Resolution> default_resolutions();

/// msstft_loss without gradients; gen is trimmed or zero-padded to ref.
double mstft_distance(const AudioBuffer& ref, const AudioBuffer& gen,
                      const std::vector<Resolution>& resolutions = default_resolutions());

struct PitchTrack {
  int hop = 0;
  int frame = 0;
  int sample_rate = 0;
  std::vector<double> f0;  // Hz, 0 when unvoiced
  std::vector<double> periodicity;
  std::vector<bool> voiced;

  std::size_t size() const { return f0.size(); }
};

struct PitchOptions {
  double f0_min = 50.0;
  double f0_max = 1000.0;
  double voicing_threshold = 0.5;
  double rms_gate = 1e-4;
  /// Frame and hop at 44.1 kHz; scaled proportionally for other rates.
  int frame_44k = 1024;
  int hop_44k = 256;
};

/// Normalized-autocorrelation pitch tracker.
PitchTrack track_pitch(const AudioBuffer& audio, const PitchOptions& options = {});

/// RMS difference of the periodicity sequences.
double periodicity_error(const PitchTrack& ref, const PitchTrack& gen);

struct F1Result {
  double f1 = 1.0;
  bool undefined = false;  // no voiced frame in either track
  std::int64_t tp = 0, fp = 0, fn = 0;
};
F1Result vuv_f1(const PitchTrack& ref, const PitchTrack& gen);

struct SmosAggregate {
  double mean = 0;
  std::int64_t count = 0;
  double stddev = 0;  // sample standard deviation (0 when count < 2)
  double ci95 = 0;    // 1.96 * stddev / sqrt(count)
};
/// Throws on an empty list or a score outside 1..5.
SmosAggregate smos_aggregate(const std::vector<int>& scores);

struct EvalEntry {
  std::string ref_path, gen_path;
  double mstft = 0, periodicity_error = 0, vuv_f1 = 1;
  bool vuv_undefined = false;
};

struct EvalReport {
  std::vector<EvalEntry> per_file;
  double mstft = 0, periodicity_error = 0, vuv_f1 = 0;
  std::string manifest_hash;

  nlohmann::json to_json() const;
};

/// Manifest: one "ref_path gen_path" pair per line (# comments allowed);
/// relative paths resolve against the manifest folder.
std::vector<std::pair<std::string, std::string>> read_pair_manifest(const std::string& path);

EvalReport evaluate_pairs(const std::vector<std::pair<std::string, std::string>>& pairs);

}  // namespace eva
