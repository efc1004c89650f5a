// specden/tests/test_datagen.cpp
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

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "specden/datagen.hpp"

using namespace specden;
namespace fs = std::filesystem;

namespace {

Waveform random_waveform(size_t n, uint64_t seed, double amp = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, amp);
  Waveform w;
  w.samples.resize(n);
  for (auto& s : w.samples) s = std::clamp(dist(rng), -0.99, 0.99);
  return w;
}

double measured_snr_db(const Waveform& clean, const Waveform& noisy) {
  Waveform noise;
  noise.samples.resize(clean.samples.size());
  for (size_t i = 0; i < clean.samples.size(); ++i)
    noise.samples[i] = noisy.samples[i] - clean.samples[i];
  return 10.0 * std::log10(mean_square_power(clean) / mean_square_power(noise));
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.is_open());
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

struct TempCorpus {
  fs::path root, speech, noise;
  TempCorpus() {
    root = fs::temp_directory_path() /
           ("specden_dg_" + std::to_string(std::random_device{}()));
    speech = root / "speech";
    noise = root / "noise";
    fs::create_directories(speech);
    fs::create_directories(noise);
    for (int i = 0; i < 3; ++i) {
      wavio::write_pcm16(speech / ("s" + std::to_string(i) + ".wav"),
                         random_waveform(16000, 100 + i));
      wavio::write_pcm16(noise / ("n" + std::to_string(i) + ".wav"),
                         random_waveform(24000, 200 + i));
    }
  }
  ~TempCorpus() { fs::remove_all(root); }
};

}  // namespace

TEST_CASE("peak normalization", "[datagen]") {
  Waveform w;
  w.samples = {0.1, -0.5, 0.25};
  auto n = normalize_utterance(w);
  REQUIRE(n.samples[1] == Catch::Approx(-0.95));
  REQUIRE(n.samples[0] == Catch::Approx(0.1 * 1.9));

  w.samples = {0.95};
  REQUIRE(normalize_utterance(w).samples[0] == Catch::Approx(0.95));

  w.samples = {2.0, -1.0};
  REQUIRE(normalize_utterance(w).samples[0] == Catch::Approx(0.95));
  REQUIRE(normalize_utterance(w).samples[1] == Catch::Approx(-0.475));

  w.samples = {0.0, 0.0};
  REQUIRE_THROWS_WITH(normalize_utterance(w), "silent utterance");
}

TEST_CASE("snr gain closed forms and measurement oracle", "[datagen]") {
  Waveform s = random_waveform(16000, 1);
  Waveform n = random_waveform(16000, 2);
  // equal-power pair
  const double scale = std::sqrt(mean_square_power(s) / mean_square_power(n));
  for (auto& x : n.samples) x *= scale;

  REQUIRE(snr_gain(s, n, 0.0) == Catch::Approx(1.0).epsilon(1e-12));
  REQUIRE(snr_gain(s, n, 20.0) == Catch::Approx(0.1).epsilon(1e-12));

  Waveform s4 = s;
  for (auto& x : s4.samples) x *= 2.0;  // P_s = 4 P_n
  REQUIRE(snr_gain(s4, n, 0.0) == Catch::Approx(2.0).epsilon(1e-12));

  // oracle: measure the SNR actually achieved by mixing with the gain
  for (double snr : {0.0, 7.5, 20.0}) {
    const double g = snr_gain(s, n, snr);
    Waveform noisy = s;
    for (size_t i = 0; i < noisy.samples.size(); ++i) noisy.samples[i] += g * n.samples[i];
    REQUIRE(measured_snr_db(s, noisy) == Catch::Approx(snr).margin(1e-9));
  }

  Waveform silent;
  silent.samples.assign(16000, 0.0);
  REQUIRE_THROWS_AS(snr_gain(s, silent, 0.0), Error);
  REQUIRE_THROWS_AS(snr_gain(silent, n, 0.0), Error);
}

TEST_CASE("noise fitting", "[datagen]") {
  Waveform n = random_waveform(480000, 3);
  auto same = fit_noise(n, 480000, 9);
  REQUIRE(same.samples == n.samples);

  Waveform shorty = random_waveform(16000, 4);
  auto tiled = fit_noise(shorty, 480000, 9);
  REQUIRE(tiled.samples.size() == 480000);

  auto again = fit_noise(shorty, 480000, 9);
  REQUIRE(again.samples == tiled.samples);

  auto crop1 = fit_noise(n, 1000, 5);
  auto crop2 = fit_noise(n, 1000, 5);
  REQUIRE(crop1.samples == crop2.samples);
  REQUIRE(crop1.samples.size() == 1000);
}

TEST_CASE("reverb identity and echo oracle", "[datagen]") {
  Waveform w = random_waveform(4000, 6);

  Waveform delta;
  delta.samples = {1.0};
  auto dry = apply_reverb(w, delta);
  REQUIRE(dry.samples == w.samples);

  Waveform half;
  half.samples = {0.5};
  auto renorm = apply_reverb(w, half);
  for (size_t i = 0; i < w.samples.size(); ++i)
    REQUIRE(renorm.samples[i] == Catch::Approx(w.samples[i]).margin(1e-12));

  // echo RIR vs an independently coded direct convolution
  Waveform rir;
  rir.samples.assign(161, 0.0);
  rir.samples[0] = 1.0;
  rir.samples[160] = 0.5;
  auto echoed = apply_reverb(w, rir);

  std::vector<double> oracle(w.samples.size(), 0.0);
  double peak_in = 0.0, peak_conv = 0.0;
  for (double s : w.samples) peak_in = std::max(peak_in, std::fabs(s));
  for (size_t i = 0; i < w.samples.size(); ++i) {
    oracle[i] = w.samples[i] + (i >= 160 ? 0.5 * w.samples[i - 160] : 0.0);
    peak_conv = std::max(peak_conv, std::fabs(oracle[i]));
  }
  for (auto& v : oracle) v *= peak_in / peak_conv;
  for (size_t i = 0; i < oracle.size(); ++i)
    REQUIRE(echoed.samples[i] == Catch::Approx(oracle[i]).margin(1e-12));

  Waveform bad_rate = delta;
  bad_rate.sample_rate = 8000;
  REQUIRE_THROWS_AS(apply_reverb(w, bad_rate), Error);
}

TEST_CASE("mixing hits the requested snr and aligns signals", "[datagen]") {
  Waveform s = normalize_utterance(random_waveform(48000, 7));
  Waveform n = random_waveform(48000, 8);

  for (double snr : {0.0, 5.0, 13.0, 20.0}) {
    MixResult r = mix(s, n, snr);
    REQUIRE(measured_snr_db(r.clean, r.noisy) == Catch::Approx(snr).margin(0.01));
    // noisy - clean = a * g * noise, where a is the shared anti-clip rescale
    double peak = 0.0;
    for (size_t i = 0; i < s.samples.size(); ++i)
      peak = std::max(peak, std::fabs(s.samples[i] + r.record.applied_gain * n.samples[i]));
    const double a = peak > 1.0 ? 0.95 / peak : 1.0;
    for (size_t i = 0; i < 100; ++i) {
      REQUIRE(r.clean.samples[i] == Catch::Approx(a * s.samples[i]).margin(1e-12));
      REQUIRE(r.noisy.samples[i] - r.clean.samples[i] ==
              Catch::Approx(a * r.record.applied_gain * n.samples[i]).margin(1e-9));
    }
  }

  // identity RIR path is bit-equivalent to the dry path
  Waveform delta;
  delta.samples = {1.0};
  MixResult dry = mix(s, n, 10.0);
  MixResult wet = mix(s, n, 10.0, delta);
  REQUIRE(dry.noisy.samples == wet.noisy.samples);
  REQUIRE(dry.clean.samples == wet.clean.samples);

  // forced clipping: rescale preserves SNR and peak lands at 0.95
  MixResult loud = mix(s, n, -20.0);  // huge noise forces |noisy| > 1
  double peak = 0.0;
  for (double v : loud.noisy.samples) peak = std::max(peak, std::fabs(v));
  REQUIRE(peak == Catch::Approx(0.95).margin(1e-9));
  REQUIRE(measured_snr_db(loud.clean, loud.noisy) == Catch::Approx(-20.0).margin(0.01));
}

TEST_CASE("manifest counts, coverage and determinism", "[datagen]") {
  TempCorpus corpus;
  ManifestSpec spec;
  spec.speech_dir = corpus.speech;
  spec.noise_dir = corpus.noise;
  spec.seed = 17;

  spec.target_hours = 1.0;
  auto m1 = build_manifest(spec);
  REQUIRE(m1.size() == 120);

  spec.target_hours = 10.0;
  auto m10 = build_manifest(spec);
  REQUIRE(m10.size() == 1200);
  std::map<double, int> hist;
  for (const auto& r : m10) hist[r.snr_db]++;
  REQUIRE(hist.size() == 21);
  for (const auto& [snr, c] : hist) REQUIRE(c >= 1);

  // byte-identical manifests from identical spec+seed
  auto p1 = corpus.root / "m1.jsonl", p2 = corpus.root / "m2.jsonl";
  save_manifest(p1, build_manifest(spec));
  save_manifest(p2, build_manifest(spec));
  REQUIRE(file_bytes(p1) == file_bytes(p2));

  // round trip through JSONL preserves every field
  auto loaded = load_manifest(p1);
  REQUIRE(loaded.size() == m10.size());
  for (size_t i = 0; i < loaded.size(); ++i) {
    REQUIRE(loaded[i].mixture_id == m10[i].mixture_id);
    REQUIRE(loaded[i].speech_path == m10[i].speech_path);
    REQUIRE(loaded[i].noise_path == m10[i].noise_path);
    REQUIRE(loaded[i].snr_db == m10[i].snr_db);
    REQUIRE(loaded[i].seed == m10[i].seed);
    REQUIRE(loaded[i].split == m10[i].split);
  }
}

TEST_CASE("manifest snr distribution is uniform within 3 sigma", "[datagen]") {
  TempCorpus corpus;
  ManifestSpec spec;
  spec.speech_dir = corpus.speech;
  spec.noise_dir = corpus.noise;
  spec.seed = 99;
  spec.duration_s = 36.0;
  spec.target_hours = 100.0;  // 10 000 records
  auto m = build_manifest(spec);
  REQUIRE(m.size() == 10000);

  std::map<double, int> hist;
  for (const auto& r : m) hist[r.snr_db]++;
  REQUIRE(hist.size() == 21);
  const double p = 1.0 / 21.0;
  const double mean = 10000.0 * p;
  const double sigma = std::sqrt(10000.0 * p * (1.0 - p));
  for (const auto& [snr, c] : hist) REQUIRE(std::fabs(c - mean) <= 3.0 * sigma);
}

TEST_CASE("rendered mixtures are deterministic and snr-accurate", "[datagen]") {
  TempCorpus corpus;
  ManifestSpec spec;
  spec.speech_dir = corpus.speech;
  spec.noise_dir = corpus.noise;
  spec.seed = 5;
  spec.duration_s = 2.0;
  spec.target_hours = 10.0 * 2.0 / 3600.0;  // 10 records
  auto manifest = build_manifest(spec);
  REQUIRE(manifest.size() == 10);

  for (auto& rec : manifest) {
    MixResult a = render_mixture(rec);
    REQUIRE(measured_snr_db(a.clean, a.noisy) == Catch::Approx(rec.snr_db).margin(0.01));
    MixtureRecord rec2 = rec;
    MixResult b = render_mixture(rec2);
    REQUIRE(a.noisy.samples == b.noisy.samples);
    REQUIRE(a.clean.samples == b.clean.samples);
  }
}
