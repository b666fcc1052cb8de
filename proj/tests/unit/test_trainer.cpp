#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "eva/autograd.hpp"
#include "eva/config.hpp"
#include "eva/io.hpp"
#include "eva/train.hpp"
#include "fixtures.hpp"

using namespace eva;

namespace {

RunConfig micro_run() {
  RunConfig c = RunConfig::preset("evagan-tiny");
  c.discriminator.mpd_periods = {2, 3};
  c.discriminator.mrd_resolutions = {{256, 64, 256}, {128, 32, 128}};
  c.discriminator.base_channels = 1;
  c.discriminator.max_channels = 4;
  c.train.segment_frames = 16;
  c.train.batch_size = 2;
  c.train.seed = 77;
  return c;
}

Dataset fixture_data() {
  Dataset d;
  d.sources.push_back({"a", 1.0, {testing::sine(8000, 440.0, 0.4, 0.5, 0.01, 1), testing::sine(8000, 220.0, 0.3)}});
  return d;
}

template <typename Real>
std::vector<double> flat_params(const ParameterSet<Real>& p) {
  std::vector<double> out;
  for (const auto& e : p.entries()) out.insert(out.end(), e.tensor.data().begin(), e.tensor.data().end());
  return out;
}

}  // namespace

TEST_CASE("AdamW examples") {
  AdamWConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.0;
  std::vector<double> p{0.3}, m{0}, v{0};
  adamw_step<double>(p, std::vector<double>{0.0}, m, v, 1, cfg);
  CHECK(p[0] == 0.3);
  for (double g : {2.5, -1e-3}) {
    std::vector<double> q{0.3}, mq{0}, vq{0};
    adamw_step<double>(q, std::vector<double>{g}, mq, vq, 1, cfg);
    CHECK(std::abs(q[0] - 0.3) == doctest::Approx(cfg.lr).epsilon(1e-5));
    CHECK((q[0] < 0.3) == (g > 0));
  }
  cfg.weight_decay = 0.1;
  std::vector<double> w{2.0}, mw{0}, vw{0};
  adamw_step<double>(w, std::vector<double>{0.0}, mw, vw, 1, cfg);
  CHECK(w[0] == doctest::Approx(2.0 * (1 - cfg.lr * cfg.weight_decay)));
}

TEST_CASE("learning rate schedule") {
  TrainConfig t;
  CHECK(lr_at(0, t) == 1e-4);
  CHECK(lr_at(1000000, t) == doctest::Approx(3.6788e-5).epsilon(1e-4));
  t.lr_decay_per_step = 1.0;
  CHECK(lr_at(123456, t) == 1e-4);
  t.lr_decay_per_step = 1.5;
  CHECK_THROWS(t.validate());
  t = TrainConfig{};
  t.segment_frames = 7;
  CHECK_THROWS(t.validate());
}

TEST_CASE("weighted source sampling") {
  Dataset d;
  d.sources.push_back({"a", 0.5, {testing::sine(8000, 100, 0.1)}});
  d.sources.push_back({"b", 0.5, {testing::sine(8000, 200, 0.1)}});
  std::mt19937_64 rng(1);
  int a = 0;
  for (int i = 0; i < 10000; ++i) a += sample_source(d, rng) == 0;
  CHECK(std::abs(a / 10000.0 - 0.5) < 0.02);
  d.sources[0].weight = 3.0;
  d.sources[1].weight = 1.0;
  a = 0;
  for (int i = 0; i < 10000; ++i) a += sample_source(d, rng) == 0;
  CHECK(std::abs(a / 10000.0 - 0.75) < 0.02);
}

TEST_CASE("batches are exact length, seeded, and pad short files") {
  const MelFrontend<float> fe(SpectralConfig::tiny_8k());
  Dataset d = fixture_data();
  d.sources[0].files.push_back(testing::sine(8000, 300, 0.05));  // 400 samples
  std::mt19937_64 r1(4), r2(4);
  for (int i = 0; i < 5; ++i) {
    const auto a = sample_batch<float>(d, 3, 16, fe, r1), b = sample_batch<float>(d, 3, 16, fe, r2);
    CHECK(a.audio.shape() == Shape{3, 1, 1024});
    CHECK(a.mel.shape() == Shape{3, 32, 16});
    CHECK(std::equal(a.audio.data().begin(), a.audio.data().end(), b.audio.data().begin()));
  }
  Dataset only_short;
  only_short.sources.push_back({"s", 1.0, {testing::sine(8000, 300, 0.05)}});
  const auto s = sample_batch<float>(only_short, 1, 16, fe, r1);
  // Mirror extension: sample n+k equals sample n-2-k.
  const auto& x = s.audio.data();
  CHECK(x[400] == x[398]);
  CHECK(x[405] == x[393]);
  CHECK_THROWS(sample_batch<float>(Dataset{}, 1, 16, fe, r1));
}

TEST_CASE("dataset loads sorted wav files and rejects mismatched rates") {
  const auto dir = testing::temp_dir("data");
  wav_write(dir + "/b.wav", testing::sine(8000, 200, 0.2));
  wav_write(dir + "/a.wav", testing::sine(8000, 100, 0.1));
  const auto d = Dataset::from_dirs({{dir, 2.0}}, 8000);
  REQUIRE(d.sources.size() == 1);
  REQUIRE(d.sources[0].files.size() == 2);
  CHECK(d.sources[0].files[0].samples.size() == 800);
  CHECK(d.sources[0].weight == 2.0);
  CHECK_THROWS(Dataset::from_dirs({{dir, 1.0}}, 44100));
  std::filesystem::remove_all(dir);
}

TEST_CASE("training is deterministic given the seed") {
  Trainer<float> a(micro_run(), fixture_data()), b(micro_run(), fixture_data());
  for (int i = 0; i < 3; ++i) CHECK(a.step().to_json_line() == b.step().to_json_line());
  CHECK(flat_params(a.generator().parameters()) == flat_params(b.generator().parameters()));
  CHECK(a.step_count() == 3);
}

TEST_CASE("resume reproduces uninterrupted training") {
  const auto dir = testing::temp_dir("resume");
  SUBCASE("f64 bitwise") {
    auto cfg = micro_run();
    cfg.precision = Precision::f64;
    Trainer<double> full(cfg, fixture_data());
    for (int i = 0; i < 4; ++i) full.step();
    Trainer<double> first(cfg, fixture_data());
    for (int i = 0; i < 2; ++i) first.step();
    first.save(dir + "/half.evac");
    Trainer<double> second(cfg, fixture_data());
    second.load(dir + "/half.evac");
    CHECK(second.step_count() == 2);
    for (int i = 0; i < 2; ++i) second.step();
    CHECK(full.last_report().to_json_line() == second.last_report().to_json_line());
    CHECK(flat_params(full.generator().parameters()) == flat_params(second.generator().parameters()));
    CHECK(flat_params(full.discriminators().parameters()) == flat_params(second.discriminators().parameters()));
  }
  SUBCASE("f32 within 1e-6") {
    Trainer<float> full(micro_run(), fixture_data());
    for (int i = 0; i < 4; ++i) full.step();
    Trainer<float> first(micro_run(), fixture_data());
    for (int i = 0; i < 2; ++i) first.step();
    first.save(dir + "/half.evac");
    Trainer<float> second(micro_run(), fixture_data());
    second.load(dir + "/half.evac");
    for (int i = 0; i < 2; ++i) second.step();
    const auto a = flat_params(full.generator().parameters()), b = flat_params(second.generator().parameters());
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(std::abs(a[i]), 1e-6));
    CHECK(worst <= 1e-6);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint round trip and integrity errors") {
  const auto dir = testing::temp_dir("ckpt");
  const auto path = dir + "/c.evac";
  Trainer<float> t(micro_run(), fixture_data());
  t.step();
  t.save(path);

  const auto mel = t.next_batch().mel;
  NoGradGuard guard;
  const auto before = t.generator().forward(mel);
  const auto g = load_generator<float>(path);
  const auto after = g.forward(mel);
  CHECK(std::equal(before.data().begin(), before.data().end(), after.data().begin()));
  const auto g64 = load_generator<double>(path);
  CHECK(g64.parameters().count() == g.parameters().count());

  // Optimizer state is partitioned by model.
  const auto stored = read_container(path);
  std::size_t g_moments = 0, d_moments = 0;
  for (const auto& s : stored) {
    if (s.name.starts_with("opt_g.m.")) {
      ++g_moments;
      CHECK(t.generator().parameters().contains(s.name.substr(8)));
    }
    if (s.name.starts_with("opt_d.m.")) {
      ++d_moments;
      CHECK(t.discriminators().parameters().contains(s.name.substr(8)));
    }
  }
  CHECK(g_moments == t.generator().parameters().entries().size());
  CHECK(d_moments == t.discriminators().parameters().entries().size());

  {
    auto other = micro_run();
    other.generator.initial_channels = 32;
    Trainer<float> wrong(other, fixture_data());
    CHECK_THROWS_AS(wrong.load(path), FormatError);
  }
  {
    std::ifstream in(sidecar_path(path));
    auto side = nlohmann::json::parse(in);
    side["version"] = 99;
    std::ofstream(sidecar_path(path)) << side.dump();
    Trainer<float> fresh(micro_run(), fixture_data());
    CHECK_THROWS_AS(fresh.load(path), FormatError);
  }
  std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
  CHECK_THROWS_AS(read_container(path), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("clipping engages when the gradient norm exceeds the limit") {
  auto cfg = micro_run();
  cfg.train.clip_norm = 1e-6;
  Trainer<float> t(cfg, fixture_data());
  const auto r = t.step();
  CHECK(r.grad_scale_g < 1.0);
  CHECK(r.grad_scale_d < 1.0);
  Trainer<float> loose(micro_run(), fixture_data());
  CHECK(loose.step().grad_scale_g == 1.0);
}

TEST_CASE("non-finite loss aborts the step with a report") {
  Trainer<float> t(micro_run(), fixture_data());
  auto batch = t.next_batch();
  batch.audio.data()[10] = std::nanf("");
  CHECK_THROWS_AS(t.train_step(batch), NumericError);
  CHECK(std::isnan(t.last_report().adv_d));
  CHECK(t.step_count() == 0);
}

TEST_CASE("trainer rejects unknown balanced losses and empty data") {
  auto cfg = micro_run();
  cfg.train.balancer.names = {"mel", "bogus", "fm", "msstft"};
  CHECK_THROWS(Trainer<float>(cfg, fixture_data()));
  CHECK_THROWS(Trainer<float>(micro_run(), Dataset{}));
}
