#include "eva/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>

#include <CLI11.hpp>
#include <json.hpp>

#include "eva/config.hpp"
#include "eva/io.hpp"
#include "eva/metrics.hpp"
#include "eva/smos.hpp"
#include "eva/train.hpp"

namespace eva::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

void write_json_file(const std::string& path, const json& j) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << j.dump(2) << "\n";
  if (!out) throw FormatError(path + ": write failed");
}

AudioBuffer read_audio(const std::string& path, const Streams& s) {
  WavInfo info;
  auto audio = wav_read(path, &info);
  if (info.channels > 1) {
    s.err << "warning: " << path << " has " << info.channels << " channels; using the first\n";
  }
  return audio;
}

template <typename Real>
int train_impl(const RunConfig& cfg, const std::string& out_dir, const std::string& resume, const Streams& s) {
  auto data = Dataset::from_dirs(cfg.train.data_dirs, cfg.spectral.sample_rate);
  Trainer<Real> trainer(cfg, std::move(data));
  if (!resume.empty()) {
    trainer.load(resume);
    s.err << "resumed from " << resume << " at step " << trainer.step_count() << "\n";
  }
  fs::create_directories(out_dir);
  const auto log_path = (fs::path(out_dir) / "train.jsonl").string();
  std::ofstream log(log_path, resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw FormatError(log_path + ": cannot open for writing");
  std::size_t warnings_seen = 0;
  auto checkpoint = [&](const std::string& name) {
    const auto path = (fs::path(out_dir) / name).string();
    trainer.save(path);
    return path;
  };
  const auto& tc = cfg.train;
  while (trainer.step_count() < tc.total_steps) {
    LossReport r;
    try {
      r = trainer.step();
    } catch (const NumericError&) {
      log << trainer.last_report().to_json_line() << "\n";
      throw;
    }
    if (tc.log_every > 0 && (r.step % tc.log_every == 0 || trainer.step_count() == tc.total_steps)) {
      log << r.to_json_line() << "\n";
      log.flush();
    }
    const auto& w = trainer.balancer().warnings();
    for (; warnings_seen < w.size(); ++warnings_seen) s.err << "warning: " << w[warnings_seen] << "\n";
    if (tc.checkpoint_every > 0 && trainer.step_count() % tc.checkpoint_every == 0) {
      std::ostringstream name;
      name << "step_" << std::setw(8) << std::setfill('0') << trainer.step_count() << ".evac";
      checkpoint(name.str());
    }
  }
  const auto last = checkpoint("last.evac");
  s.out << "trained " << trainer.step_count() << " steps; checkpoint " << last << "\n";
  return ok;
}

int cmd_train(const std::string& config, const std::string& out_dir, const std::string& resume, const Streams& s) {
  const auto cfg = load_run_config(config);
  cfg.validate();
  return cfg.precision == Precision::f64 ? train_impl<double>(cfg, out_dir, resume, s)
                                         : train_impl<float>(cfg, out_dir, resume, s);
}

std::string checkpoint_precision(const std::string& ckpt) {
  std::ifstream in(sidecar_path(ckpt));
  if (!in) throw FormatError(sidecar_path(ckpt) + ": missing checkpoint sidecar");
  json side;
  try {
    in >> side;
  } catch (const json::exception& e) {
    throw FormatError(sidecar_path(ckpt) + ": " + e.what());
  }
  return side.value("precision", "f32");
}

template <typename Real>
AudioBuffer copysyn_impl(const std::string& ckpt, const std::string& in, const Streams& s) {
  RunConfig cfg;
  const auto g = load_generator<Real>(ckpt, &cfg);
  MelSpec mel;
  const auto ext = fs::path(in).extension().string();
  if (ext == ".wav" || ext == ".WAV") {
    const auto audio = read_audio(in, s);
    if (audio.sample_rate != cfg.spectral.sample_rate) {
      throw FormatError(in + ": sample rate " + std::to_string(audio.sample_rate) + " Hz, model expects " +
                        std::to_string(cfg.spectral.sample_rate));
    }
    mel = mel_spectrogram(audio, cfg.spectral);
  } else {
    mel = read_mel(in);
    if (!(mel.config == cfg.spectral)) throw FormatError(in + ": mel settings differ from the checkpoint's");
  }
  NoGradGuard guard;
  return generate(g, mel);
}

int cmd_copysyn(const std::string& ckpt, const std::string& in, const std::string& out, const Streams& s) {
  const auto audio = checkpoint_precision(ckpt) == "f64" ? copysyn_impl<double>(ckpt, in, s)
                                                         : copysyn_impl<float>(ckpt, in, s);
  wav_write(out, audio, WavFormat::pcm16);
  s.out << "wrote " << audio.samples.size() << " samples to " << out << "\n";
  return ok;
}

int cmd_mel(const std::string& config, const std::string& in, const std::string& out, const Streams& s) {
  const auto cfg = load_run_config(config);
  const auto audio = read_audio(in, s);
  if (audio.sample_rate != cfg.spectral.sample_rate) {
    throw FormatError(in + ": sample rate " + std::to_string(audio.sample_rate) + " Hz, config expects " +
                      std::to_string(cfg.spectral.sample_rate));
  }
  const auto mel = mel_spectrogram(audio, cfg.spectral);
  write_mel(out, mel);
  s.out << "wrote " << mel.frames << " frames x " << cfg.spectral.mel_bins << " bins to " << out << "\n";
  return ok;
}

int cmd_eval(const std::string& manifest, const std::string& report_path, const Streams& s) {
  const auto pairs = read_pair_manifest(manifest);
  if (pairs.empty()) throw FormatError(manifest + ": no pairs");
  const auto report = evaluate_pairs(pairs);
  write_json_file(report_path, report.to_json());
  s.out << "files " << pairs.size() << "  mstft " << report.mstft << "  periodicity " << report.periodicity_error
        << "  vuv_f1 " << report.vuv_f1 << "\n";
  return ok;
}

int cmd_params(const std::string& config, const Streams& s) {
  const auto cfg = load_run_config(config);
  const auto b = count_parameters(cfg.generator);
  const auto f = count_flops_per_frame(cfg.generator);
  auto millions = [](double v) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(2) << v / 1e6 << "M";
    return o.str();
  };
  s.out << "config     " << config << "\n"
        << "upsampler  " << b.upsampler << " (" << millions(static_cast<double>(b.upsampler)) << ")\n"
        << "cam        " << b.cam << " (" << millions(static_cast<double>(b.cam)) << ")\n"
        << "total      " << b.total() << " (" << millions(static_cast<double>(b.total())) << ")\n"
        << "flops/frame upsampler " << millions(f.upsampler) << " cam " << millions(f.cam) << "\n";
  json j{{"config", config},
         {"upsampler", b.upsampler},
         {"cam", b.cam},
         {"total", b.total()},
         {"flops_per_frame", {{"upsampler", f.upsampler}, {"cam", f.cam}}}};
  s.out << j.dump() << "\n";
  return ok;
}

int cmd_smos_export(const std::string& manifest, const std::string& out, const Streams& s) {
  const auto session = smos::session_from_manifest(manifest);
  for (const auto& p : session.at("pairs")) {
    for (const char* key : {"ref_path", "gen_path"}) {
      const auto path = p.at(key).get<std::string>();
      wav_read(path);
    }
  }
  write_json_file(out, session);
  s.out << "wrote session with " << session.at("pairs").size() << " pairs to " << out << "\n";
  return ok;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Streams s{out, err};
  CLI::App app{"evagan vocoder toolkit"};
  app.require_subcommand(1);
  std::string config, out_path, resume, ckpt, in, manifest;

  auto* train = app.add_subcommand("train", "Train from a run config");
  train->add_option("--config", config, "Run config JSON")->required();
  train->add_option("--out", out_path, "Output folder for logs and checkpoints")->required();
  train->add_option("--resume", resume, "Checkpoint to resume from");

  auto* copysyn = app.add_subcommand("copysyn", "Copy-synthesis: wav or mel to wav");
  copysyn->add_option("--ckpt", ckpt, "Checkpoint (.evac)")->required();
  copysyn->add_option("--in", in, "Input .wav or mel file")->required();
  copysyn->add_option("--out", out_path, "Output wav")->required();

  auto* mel = app.add_subcommand("mel", "Compute a mel file from a wav");
  mel->add_option("--config", config, "Run config JSON")->required();
  mel->add_option("--in", in, "Input wav")->required();
  mel->add_option("--out", out_path, "Output mel file")->required();

  auto* eval = app.add_subcommand("eval", "Objective metrics over ref/gen pairs");
  eval->add_option("--manifest", manifest, "Text file of 'ref gen' pairs")->required();
  eval->add_option("--report", out_path, "Output JSON report")->required();

  auto* params = app.add_subcommand("params", "Print the generator parameter breakdown");
  params->add_option("--config", config, "Run config JSON")->required();

  auto* smos_export = app.add_subcommand("smos-export", "Build a rating session document");
  smos_export->add_option("--manifest", manifest, "Text file of 'ref gen system_label' triples")->required();
  smos_export->add_option("--out", out_path, "Output session JSON")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return usage;
  }

  try {
    if (*train) return cmd_train(config, out_path, resume, s);
    if (*copysyn) return cmd_copysyn(ckpt, in, out_path, s);
    if (*mel) return cmd_mel(config, in, out_path, s);
    if (*eval) return cmd_eval(manifest, out_path, s);
    if (*params) return cmd_params(config, s);
    if (*smos_export) return cmd_smos_export(manifest, out_path, s);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return numeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return data;
  }
  return usage;
}

}  // namespace eva::cli
