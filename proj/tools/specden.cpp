// specden/tools/specden.cpp
//
// Command-line front end: mix, train, enhance, evaluate, report.
//
// Copyright 2026  specden authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <malloc.h>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "specden/cliutil.hpp"
#include "specden/datagen.hpp"
#include "specden/image.hpp"
#include "specden/metrics.hpp"
#include "specden/model.hpp"
#include "specden/trainer.hpp"

namespace fs = std::filesystem;
using namespace specden;

namespace {

struct MixArgs {
  std::string speech_dir, noise_dir, rir_dir;
  double hours = 1.0;
  std::string snr_grid = "0:20:1";
  uint64_t seed = 0;
  std::string split = "train";
  double duration_s = 30.0;
  std::string out;
};

int run_mix(const MixArgs& a) {
  ManifestSpec spec;
  spec.speech_dir = a.speech_dir;
  spec.noise_dir = a.noise_dir;
  if (!a.rir_dir.empty()) spec.rir_dir = a.rir_dir;
  spec.target_hours = a.hours;
  spec.snr_grid = parse_snr_grid(a.snr_grid);
  spec.seed = a.seed;
  spec.split = a.split;
  spec.duration_s = a.duration_s;

  fs::create_directories(a.out);
  auto manifest = build_manifest(spec);
  log_info("manifest_built", {{"records", std::to_string(manifest.size())}});
  for (auto& rec : manifest) {
    MixResult r = render_mixture(rec);
    wavio::write_pcm16(fs::path(a.out) / (rec.mixture_id + "_noisy.wav"), r.noisy);
    wavio::write_pcm16(fs::path(a.out) / (rec.mixture_id + "_clean.wav"), r.clean);
  }
  save_manifest(fs::path(a.out) / "manifest.jsonl", manifest);
  log_info("mix_done", {{"out", a.out}});
  return 0;
}

struct TrainArgs {
  std::string manifest, val, out;
  std::string model = "dvunet";
  int depth = 5;
  int base_channels = 16;
  int chunk_frames = 512;
  int chunk_bins = 512;
  int epochs = 200;
  int batch_size = 8;
  double lr = 0.001;
  int warmup = 500;
  int patience = 10;
  int validations_per_epoch = 2;
  double kl_weight = 1e-3;
  uint64_t seed = 0;
  long max_steps = -1;
};

int run_train(const TrainArgs& a) {
  ModelConfig mc = ModelConfig::from_variant(a.model);
  mc.depth_N = a.depth;
  mc.base_channels = a.base_channels;
  mc.input_height = a.chunk_bins;
  mc.input_width = a.chunk_frames;
  mc.kl_weight = a.kl_weight;
  mc.validate();

  TrainConfig tc;
  tc.max_epochs = a.epochs;
  tc.batch_size = a.batch_size;
  tc.peak_lr = a.lr;
  tc.warmup_batches = a.warmup;
  tc.patience_validations = a.patience;
  tc.validations_per_epoch = a.validations_per_epoch;
  tc.kl_weight = a.kl_weight;
  tc.seed = a.seed;

  TrainResult r = train(a.manifest, a.val.empty() ? fs::path(a.manifest) : fs::path(a.val), mc,
                        tc, a.out, StftConfig{}, 1e-10, a.max_steps);
  log_info("train_done", {{"steps", std::to_string(r.steps)},
                          {"best_val_loss", std::to_string(r.best_val_loss)},
                          {"best", r.best_checkpoint.string()}});
  return 0;
}

struct EnhanceArgs {
  std::string ckpt, in, out;
  std::string png_dir;
};

int run_enhance(const EnhanceArgs& a) {
  Checkpoint ckpt = load_checkpoint(a.ckpt);
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  EnhanceReport rep = enhance_file(ckpt, a.in, a.out);
  if (!a.png_dir.empty()) {
    fs::create_directories(a.png_dir);
    const std::string stem = fs::path(a.out).stem().string();
    image::render_spectrogram_png(fs::path(a.png_dir) / (stem + "_noisy.png"),
                                  rep.noisy_spectra);
    image::render_spectrogram_png(fs::path(a.png_dir) / (stem + "_enhanced.png"),
                                  rep.enhanced_spectra);
  }
  log_info("enhance_done", {{"out", a.out}, {"samples", std::to_string(rep.samples)}});
  return 0;
}

struct EvaluateArgs {
  std::string ckpt, manifest, out;
  bool save_audio = false;
};

int run_evaluate(const EvaluateArgs& a) {
  Checkpoint ckpt = load_checkpoint(a.ckpt);
  fs::create_directories(a.out);
  metrics::MetricReport rep =
      metrics::evaluate(ckpt, a.manifest, a.save_audio ? fs::path(a.out) : fs::path{});
  metrics::save_report(fs::path(a.out) / "report.csv", rep);
  metrics::save_report_json(fs::path(a.out) / "report.json", rep);
  const metrics::MetricRow agg = rep.aggregate();
  log_info("evaluate_done", {{"mixtures", std::to_string(rep.rows.size())},
                             {"si_sdr_in", std::to_string(agg.si_sdr_in)},
                             {"si_sdr_out", std::to_string(agg.si_sdr_out)},
                             {"stoi_in", std::to_string(agg.stoi_in)},
                             {"stoi_out", std::to_string(agg.stoi_out)}});
  return 0;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out;
};

int run_report(const ReportArgs& a) {
  std::vector<metrics::MetricReport> reports;
  for (const auto& in : a.inputs) {
    fs::path p(in);
    if (fs::is_directory(p)) p /= "report.json";
    reports.push_back(metrics::load_report_json(p));
  }
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  metrics::emit_tables(reports, a.out);
  log_info("report_done", {{"out", a.out}, {"reports", std::to_string(reports.size())}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // keep freed arena pages around: training re-allocates large buffers per step
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, -1);

  CLI::App app{"specden: spectrogram-domain speech enhancement toolkit"};
  app.require_subcommand(1);

  int threads = 1;
  app.add_option("--threads", threads, "worker cap (1 = fully deterministic)")
      ->check(CLI::PositiveNumber);

  MixArgs mix_args;
  auto* mix_cmd = app.add_subcommand("mix", "synthesize a noisy/clean corpus");
  mix_cmd->set_config("--spec", "", "key=value spec file (flags win)");
  mix_cmd->add_option("--speech-dir", mix_args.speech_dir, "directory of speech WAVs")
      ->required();
  mix_cmd->add_option("--noise-dir", mix_args.noise_dir, "directory of noise WAVs")->required();
  mix_cmd->add_option("--rir-dir", mix_args.rir_dir, "directory of room impulse responses");
  mix_cmd->add_option("--hours", mix_args.hours, "target corpus length in hours");
  mix_cmd->add_option("--snr-grid", mix_args.snr_grid, "SNR grid start:stop:step in dB");
  mix_cmd->add_option("--seed", mix_args.seed, "master seed");
  mix_cmd->add_option("--split", mix_args.split, "split tag used in mixture ids");
  mix_cmd->add_option("--duration", mix_args.duration_s, "seconds per mixture");
  mix_cmd->add_option("--out", mix_args.out, "output directory")->required();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train an enhancement model");
  train_cmd->set_config("--config", "", "key=value config file (flags win)");
  train_cmd->add_option("--manifest", train_args.manifest, "training manifest")->required();
  train_cmd->add_option("--val", train_args.val, "validation manifest (default: training)");
  train_cmd->add_option("--model", train_args.model, "architecture variant")
      ->check(CLI::IsMember({"ae", "vae", "dvae", "unet", "dunet", "dvunet"}));
  train_cmd->add_option("--depth", train_args.depth, "encoder depth N");
  train_cmd->add_option("--base-channels", train_args.base_channels, "first-block channels");
  train_cmd->add_option("--chunk-frames", train_args.chunk_frames, "time frames per chunk");
  train_cmd->add_option("--chunk-bins", train_args.chunk_bins, "frequency bins per chunk");
  train_cmd->add_option("--epochs", train_args.epochs, "maximum epochs");
  train_cmd->add_option("--batch-size", train_args.batch_size, "chunks per batch");
  train_cmd->add_option("--lr", train_args.lr, "post-warm-up learning rate");
  train_cmd->add_option("--warmup", train_args.warmup, "warm-up batches");
  train_cmd->add_option("--patience", train_args.patience, "early-stop patience (validations)");
  train_cmd->add_option("--validations-per-epoch", train_args.validations_per_epoch,
                        "validation runs per epoch");
  train_cmd->add_option("--kl-weight", train_args.kl_weight, "KL term weight");
  train_cmd->add_option("--seed", train_args.seed, "master seed");
  train_cmd->add_option("--max-steps", train_args.max_steps, "hard step cap (-1 = none)");
  train_cmd->add_option("--out", train_args.out, "output directory")->required();

  EnhanceArgs enhance_args;
  auto* enhance_cmd = app.add_subcommand("enhance", "enhance one WAV file");
  enhance_cmd->add_option("--ckpt", enhance_args.ckpt, "checkpoint file")->required();
  enhance_cmd->add_option("--in", enhance_args.in, "noisy input WAV")->required();
  enhance_cmd->add_option("--out", enhance_args.out, "enhanced output WAV")->required();
  enhance_cmd->add_option("--png-dir", enhance_args.png_dir,
                          "also render noisy/enhanced spectrogram PNGs here");

  EvaluateArgs eval_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on a test manifest");
  eval_cmd->add_option("--ckpt", eval_args.ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--manifest", eval_args.manifest, "test manifest")->required();
  eval_cmd->add_flag("--save-audio", eval_args.save_audio, "keep enhanced WAVs");
  eval_cmd->add_option("--out", eval_args.out, "output directory")->required();

  ReportArgs report_args;
  auto* report_cmd = app.add_subcommand("report", "combine evaluate outputs into one table");
  report_cmd->add_option("--in", report_args.inputs, "evaluate output dirs or report.json files")
      ->required();
  report_cmd->add_option("--out", report_args.out, "combined CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  if (threads != 1)
    log_warn("threads_capped", {{"requested", std::to_string(threads)}, {"used", "1"}});

  try {
    if (mix_cmd->parsed()) return run_mix(mix_args);
    if (train_cmd->parsed()) return run_train(train_args);
    if (enhance_cmd->parsed()) return run_enhance(enhance_args);
    if (eval_cmd->parsed()) return run_evaluate(eval_args);
    if (report_cmd->parsed()) return run_report(report_args);
  } catch (const std::exception& e) {
    log_line("ERROR", "fatal", {{"error", e.what()}});
    return 1;
  }
  return 2;
}
