#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "eva/cli.hpp"
#include "eva/io.hpp"
#include "eva/signal.hpp"
#include "fixtures.hpp"

using namespace eva;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string preset(const std::string& name) { return std::string(EVA_PRESET_DIR) + "/" + name + ".json"; }

// Tiny preset with a small discriminator so a few steps run quickly.
std::string write_train_config(const std::string& dir, int steps, const std::string& precision = "f32") {
  nlohmann::json j;
  j["preset"] = "evagan-tiny";
  j["precision"] = precision;
  j["discriminator"] = {{"mpd_periods", {2, 3}},
                        {"mrd_resolutions", {{256, 64, 256}, {128, 32, 128}}},
                        {"base_channels", 1},
                        {"max_channels", 4}};
  j["train"] = {{"segment_frames", 16},
                {"batch_size", 1},
                {"total_steps", steps},
                {"checkpoint_every", 2},
                {"data_dirs", {{{"path", "data"}, {"weight", 1.0}}}}};
  const auto path = dir + "/run.json";
  std::ofstream(path) << j.dump(2);
  return path;
}

nlohmann::json last_json_line(const std::string& text) {
  std::istringstream in(text);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  return nlohmann::json::parse(last);
}

int count_lines(const std::string& path) {
  std::ifstream in(path);
  int n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

}  // namespace

TEST_CASE("usage errors and help") {
  CHECK(run({}).code == cli::usage);
  CHECK(run({"bogus"}).code == cli::usage);
  CHECK(run({"params"}).code == cli::usage);
  const auto h = run({"--help"});
  CHECK(h.code == cli::ok);
  CHECK(h.out.find("copysyn") != std::string::npos);
}

TEST_CASE("params prints the breakdown for every shipped preset") {
  for (const char* name : {"hifigan-base-44k", "evagan-base", "evagan-big", "evagan-tiny"}) {
    const auto r = run({"params", "--config", preset(name)});
    REQUIRE(r.code == cli::ok);
    CHECK(r.out.find("upsampler") != std::string::npos);
    const auto j = last_json_line(r.out);
    CHECK(j.at("total").get<std::int64_t>() == j.at("upsampler").get<std::int64_t>() + j.at("cam").get<std::int64_t>());
  }
  const auto base = last_json_line(run({"params", "--config", preset("evagan-base")}).out);
  CHECK(std::abs(base.at("cam").get<double>() - 18.6e6) / 18.6e6 < 0.10);
  CHECK(run({"params", "--config", "/nonexistent.json"}).code == cli::data);
}

TEST_CASE("mel, train, resume, copysyn, eval and smos-export end to end") {
  const auto dir = testing::temp_dir("cli");
  fs::create_directories(dir + "/data");
  wav_write(dir + "/data/a.wav", testing::sine(8000, 440.0, 0.3, 0.5, 0.003, 5));
  const auto cfg = write_train_config(dir, 4);

  auto r = run({"mel", "--config", cfg, "--in", dir + "/data/a.wav", "--out", dir + "/a.mel"});
  REQUIRE(r.code == cli::ok);
  const auto mel = read_mel(dir + "/a.mel");
  CHECK(mel.frames == 2400 / 64);
  CHECK(mel.config == SpectralConfig::tiny_8k());

  r = run({"train", "--config", cfg, "--out", dir + "/run"});
  REQUIRE(r.code == cli::ok);
  CHECK(fs::exists(dir + "/run/last.evac"));
  CHECK(fs::exists(dir + "/run/last.json"));
  CHECK(fs::exists(dir + "/run/step_00000002.evac"));
  CHECK(count_lines(dir + "/run/train.jsonl") == 4);

  // Resume from step 4 into a longer run; the log keeps growing.
  const auto cfg6 = write_train_config(dir, 6);
  r = run({"train", "--config", cfg6, "--out", dir + "/run", "--resume", dir + "/run/step_00000004.evac"});
  REQUIRE(r.code == cli::ok);
  CHECK(count_lines(dir + "/run/train.jsonl") == 6);
  CHECK(r.err.find("at step 4") != std::string::npos);

  r = run({"copysyn", "--ckpt", dir + "/run/last.evac", "--in", dir + "/data/a.wav", "--out", dir + "/c1.wav"});
  REQUIRE(r.code == cli::ok);
  CHECK(wav_read(dir + "/c1.wav").samples.size() == static_cast<std::size_t>(mel.frames * 64));
  r = run({"copysyn", "--ckpt", dir + "/run/last.evac", "--in", dir + "/a.mel", "--out", dir + "/c2.wav"});
  REQUIRE(r.code == cli::ok);
  CHECK(wav_read(dir + "/c1.wav").samples == wav_read(dir + "/c2.wav").samples);
  wav_write(dir + "/wrong_rate.wav", testing::sine(16000, 440.0, 0.3));
  CHECK(run({"copysyn", "--ckpt", dir + "/run/last.evac", "--in", dir + "/wrong_rate.wav", "--out", dir + "/x.wav"})
            .code == cli::data);

  std::ofstream(dir + "/pairs.txt") << "data/a.wav data/a.wav\n";
  r = run({"eval", "--manifest", dir + "/pairs.txt", "--report", dir + "/report.json"});
  REQUIRE(r.code == cli::ok);
  std::ifstream rep(dir + "/report.json");
  const auto report = nlohmann::json::parse(rep);
  CHECK(report.at("aggregate").at("mstft") == 0.0);
  CHECK(report.at("aggregate").at("vuv_f1") == 1.0);

  std::ofstream(dir + "/smos.txt") << "data/a.wav c1.wav evagan\ndata/a.wav c2.wav other\n";
  r = run({"smos-export", "--manifest", dir + "/smos.txt", "--out", dir + "/session.json"});
  REQUIRE(r.code == cli::ok);
  std::ifstream ses(dir + "/session.json");
  const auto session = nlohmann::json::parse(ses);
  CHECK(session.at("pairs").size() == 2);
  std::ofstream(dir + "/smos_bad.txt") << "data/a.wav missing.wav evagan\n";
  CHECK(run({"smos-export", "--manifest", dir + "/smos_bad.txt", "--out", dir + "/s2.json"}).code == cli::data);
  fs::remove_all(dir);
}

TEST_CASE("non-finite training data exits with the numeric code") {
  const auto dir = testing::temp_dir("cli_nan");
  fs::create_directories(dir + "/data");
  auto a = testing::sine(8000, 440.0, 0.3);
  for (std::size_t i = 0; i < a.samples.size(); i += 50) a.samples[i] = std::nanf("");
  wav_write(dir + "/data/a.wav", a, WavFormat::float32);
  const auto cfg = write_train_config(dir, 2);
  const auto r = run({"train", "--config", cfg, "--out", dir + "/run"});
  CHECK(r.code == cli::numeric);
  CHECK(r.err.find("non-finite") != std::string::npos);
  CHECK(count_lines(dir + "/run/train.jsonl") == 1);
  fs::remove_all(dir);
}

TEST_CASE("missing and malformed inputs exit with the data code") {
  const auto dir = testing::temp_dir("cli_bad");
  std::ofstream(dir + "/bad.json") << "{ not json";
  CHECK(run({"params", "--config", dir + "/bad.json"}).code == cli::data);
  CHECK(run({"mel", "--config", preset("evagan-tiny"), "--in", dir + "/none.wav", "--out", dir + "/o.mel"}).code ==
        cli::data);
  CHECK(run({"eval", "--manifest", dir + "/none.txt", "--report", dir + "/r.json"}).code == cli::data);
  CHECK(run({"copysyn", "--ckpt", dir + "/none.evac", "--in", "x.wav", "--out", "y.wav"}).code == cli::data);
  fs::remove_all(dir);
}
