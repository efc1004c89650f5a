// specden/datagen.hpp
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

#ifndef SPECDEN_DATAGEN_HPP_
#define SPECDEN_DATAGEN_HPP_

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "specden/common.hpp"
#include "specden/wav.hpp"

namespace specden {

// Provenance of one synthesized noisy utterance.
struct MixtureRecord {
  std::string mixture_id;
  std::string speech_path;
  std::string noise_path;
  double snr_db = 0.0;
  double applied_gain = 1.0;  // linear gain applied to the fitted noise
  std::optional<std::string> rir_path;
  std::string split = "train";  // train | val | test
  uint64_t seed = 0;
  double duration_s = 30.0;
};

struct ManifestSpec {
  std::filesystem::path speech_dir;
  std::filesystem::path noise_dir;
  std::optional<std::filesystem::path> rir_dir;
  double target_hours = 1.0;
  std::vector<double> snr_grid;  // default 0..20 dB in 1 dB steps
  uint64_t seed = 0;
  std::string split = "train";
  double duration_s = 30.0;

  static std::vector<double> default_snr_grid() {
    std::vector<double> g;
    for (int s = 0; s <= 20; ++s) g.push_back(static_cast<double>(s));
    return g;
  }
};

// Scales so that the peak absolute amplitude is 0.95.
inline Waveform normalize_utterance(const Waveform& w) {
  double peak = 0.0;
  for (double s : w.samples) peak = std::max(peak, std::fabs(s));
  SPECDEN_CHECK(peak > 0.0, "silent utterance");
  Waveform out = w;
  const double g = 0.95 / peak;
  for (double& s : out.samples) s *= g;
  return out;
}

inline double mean_square_power(const Waveform& w) {
  double acc = 0.0;
  for (double s : w.samples) acc += s * s;
  return w.samples.empty() ? 0.0 : acc / w.samples.size();
}

// Gain g such that speech + g * noise has the requested SNR:
// g = sqrt(P_s / (P_n * 10^(snr/10))).
inline double snr_gain(const Waveform& speech, const Waveform& noise, double snr_db) {
  SPECDEN_CHECK(speech.samples.size() == noise.samples.size(),
                "snr_gain: length mismatch");
  const double ps = mean_square_power(speech);
  const double pn = mean_square_power(noise);
  SPECDEN_CHECK(ps > 0.0, "silent speech");
  SPECDEN_CHECK(pn > 0.0, "silent noise");
  return std::sqrt(ps / (pn * std::pow(10.0, snr_db / 10.0)));
}

// Fits noise to target_len: random contiguous crop when longer, tiled with
// 10 ms crossfades when shorter. Deterministic in `seed`.
inline Waveform fit_noise(const Waveform& noise, size_t target_len, uint64_t seed) {
  SPECDEN_CHECK(!noise.samples.empty(), "empty noise input");
  Waveform out;
  out.sample_rate = noise.sample_rate;

  if (noise.samples.size() == target_len) {
    out.samples = noise.samples;
    return out;
  }
  if (noise.samples.size() > target_len) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<size_t> dist(0, noise.samples.size() - target_len);
    size_t start = dist(rng);
    out.samples.assign(noise.samples.begin() + start,
                       noise.samples.begin() + start + target_len);
    return out;
  }

  // Tile with linear crossfades of min(10 ms, len/2).
  const size_t xfade = std::min<size_t>(noise.sample_rate / 100, noise.samples.size() / 2);
  std::vector<double> tiled(noise.samples);
  while (tiled.size() < target_len + xfade) {
    size_t base = tiled.size() - xfade;
    for (size_t i = 0; i < xfade; ++i) {
      double a = static_cast<double>(i + 1) / (xfade + 1);
      tiled[base + i] = (1.0 - a) * tiled[base + i] + a * noise.samples[i];
    }
    tiled.insert(tiled.end(), noise.samples.begin() + xfade, noise.samples.end());
  }
  out.samples.assign(tiled.begin(), tiled.begin() + target_len);
  return out;
}

// Full convolution with the RIR, truncated to len(w), renormalized to the
// pre-convolution peak.
inline Waveform apply_reverb(const Waveform& w, const Waveform& rir) {
  SPECDEN_CHECK(!rir.samples.empty(), "empty RIR");
  SPECDEN_CHECK(w.sample_rate == rir.sample_rate, "RIR sample rate mismatch");

  double peak_in = 0.0;
  for (double s : w.samples) peak_in = std::max(peak_in, std::fabs(s));

  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.assign(w.samples.size(), 0.0);
  const size_t n = w.samples.size();
  const size_t m = rir.samples.size();
  for (size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    const size_t kmax = std::min(m, i + 1);
    for (size_t k = 0; k < kmax; ++k) acc += w.samples[i - k] * rir.samples[k];
    out.samples[i] = acc;
  }

  double peak_out = 0.0;
  for (double s : out.samples) peak_out = std::max(peak_out, std::fabs(s));
  if (peak_out > 0.0 && peak_in > 0.0) {
    const double g = peak_in / peak_out;
    for (double& s : out.samples) s *= g;
  }
  return out;
}

struct MixResult {
  Waveform noisy;
  Waveform clean;
  MixtureRecord record;
};

// Mixes normalized speech and fitted noise at the requested SNR. An optional
// RIR is applied to the speech before mixing; the clean target stays the
// reverberant speech. If the mixture would clip, both signals are jointly
// rescaled to peak 0.95 (preserves SNR and alignment).
inline MixResult mix(const Waveform& speech, const Waveform& noise, double snr_db,
                     const std::optional<Waveform>& rir = std::nullopt) {
  SPECDEN_CHECK(speech.samples.size() == noise.samples.size(), "mix: length mismatch");
  MixResult r;
  r.clean = rir ? apply_reverb(speech, *rir) : speech;
  const double g = snr_gain(r.clean, noise, snr_db);

  r.noisy.sample_rate = speech.sample_rate;
  r.noisy.samples.resize(speech.samples.size());
  double peak = 0.0;
  for (size_t i = 0; i < speech.samples.size(); ++i) {
    r.noisy.samples[i] = r.clean.samples[i] + g * noise.samples[i];
    peak = std::max(peak, std::fabs(r.noisy.samples[i]));
  }
  if (peak > 1.0) {
    const double s = 0.95 / peak;
    for (auto& x : r.noisy.samples) x *= s;
    for (auto& x : r.clean.samples) x *= s;
  }
  r.record.snr_db = snr_db;
  r.record.applied_gain = g;
  r.record.duration_s = speech.duration_s();
  return r;
}

namespace detail {

inline std::vector<std::filesystem::path> list_wavs(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  SPECDEN_CHECK(std::filesystem::is_directory(dir), "not a directory: " + dir.string());
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace detail

// Builds a seeded, reproducible manifest. Every SNR grid value appears at
// least once when the record count allows; speech/noise files are drawn
// uniformly with replacement.
inline std::vector<MixtureRecord> build_manifest(const ManifestSpec& spec) {
  SPECDEN_CHECK(spec.target_hours > 0, "target_hours must be positive");
  std::vector<double> grid = spec.snr_grid.empty() ? ManifestSpec::default_snr_grid()
                                                   : spec.snr_grid;
  auto speech = detail::list_wavs(spec.speech_dir);
  auto noise = detail::list_wavs(spec.noise_dir);
  SPECDEN_CHECK(!speech.empty(), "no .wav files in speech_dir");
  SPECDEN_CHECK(!noise.empty(), "no .wav files in noise_dir");
  std::vector<std::filesystem::path> rirs;
  if (spec.rir_dir) rirs = detail::list_wavs(*spec.rir_dir);

  const size_t count =
      static_cast<size_t>(std::ceil(spec.target_hours * 3600.0 / spec.duration_s));
  if (count < grid.size())
    log_warn("manifest_snr_coverage_relaxed",
             {{"count", std::to_string(count)}, {"grid", std::to_string(grid.size())}});

  std::mt19937_64 rng(spec.seed);

  // First |grid| SNRs are a permutation of the grid (coverage), the rest are
  // uniform draws; the whole list is then shuffled.
  std::vector<double> snrs(grid);
  std::shuffle(snrs.begin(), snrs.end(), rng);
  if (snrs.size() > count) snrs.resize(count);
  std::uniform_int_distribution<size_t> gdist(0, grid.size() - 1);
  while (snrs.size() < count) snrs.push_back(grid[gdist(rng)]);
  std::shuffle(snrs.begin(), snrs.end(), rng);

  std::uniform_int_distribution<size_t> sdist(0, speech.size() - 1);
  std::uniform_int_distribution<size_t> ndist(0, noise.size() - 1);
  std::uniform_int_distribution<size_t> rdist(0, rirs.empty() ? 0 : rirs.size() - 1);

  std::vector<MixtureRecord> manifest;
  manifest.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    MixtureRecord rec;
    char idbuf[64];
    std::snprintf(idbuf, sizeof(idbuf), "%s_%06zu", spec.split.c_str(), i);
    rec.mixture_id = idbuf;
    rec.speech_path = speech[sdist(rng)].string();
    rec.noise_path = noise[ndist(rng)].string();
    rec.snr_db = snrs[i];
    if (!rirs.empty()) rec.rir_path = rirs[rdist(rng)].string();
    rec.split = spec.split;
    rec.seed = derive_seed(spec.seed, i);
    rec.duration_s = spec.duration_s;
    manifest.push_back(std::move(rec));
  }
  return manifest;
}

// Renders one manifest record to (noisy, clean). applied_gain is filled in.
inline MixResult render_mixture(MixtureRecord& rec) {
  Waveform speech = normalize_utterance(wavio::read(rec.speech_path));
  Waveform noise = wavio::read(rec.noise_path);
  SPECDEN_CHECK(speech.sample_rate == noise.sample_rate, "sample rate mismatch");
  const size_t target = static_cast<size_t>(rec.duration_s * speech.sample_rate);
  speech = fit_noise(speech, target, derive_seed(rec.seed, 1));
  noise = fit_noise(noise, target, derive_seed(rec.seed, 2));

  std::optional<Waveform> rir;
  if (rec.rir_path) rir = wavio::read(*rec.rir_path);

  MixResult r = mix(speech, noise, rec.snr_db, rir);
  rec.applied_gain = r.record.applied_gain;
  r.record = rec;
  return r;
}

// ---- JSON Lines manifest IO (keys exactly as field names) ----

inline nlohmann::json record_to_json(const MixtureRecord& r) {
  nlohmann::json j;
  j["mixture_id"] = r.mixture_id;
  j["speech_path"] = r.speech_path;
  j["noise_path"] = r.noise_path;
  j["snr_db"] = r.snr_db;
  j["applied_gain"] = r.applied_gain;
  if (r.rir_path) j["rir_path"] = *r.rir_path; else j["rir_path"] = nullptr;
  j["split"] = r.split;
  j["seed"] = r.seed;
  j["duration_s"] = r.duration_s;
  return j;
}

inline MixtureRecord record_from_json(const nlohmann::json& j) {
  MixtureRecord r;
  r.mixture_id = j.at("mixture_id").get<std::string>();
  r.speech_path = j.at("speech_path").get<std::string>();
  r.noise_path = j.at("noise_path").get<std::string>();
  r.snr_db = j.at("snr_db").get<double>();
  r.applied_gain = j.at("applied_gain").get<double>();
  if (j.contains("rir_path") && !j.at("rir_path").is_null())
    r.rir_path = j.at("rir_path").get<std::string>();
  r.split = j.at("split").get<std::string>();
  r.seed = j.at("seed").get<uint64_t>();
  r.duration_s = j.at("duration_s").get<double>();
  return r;
}

inline void save_manifest(const std::filesystem::path& path,
                          const std::vector<MixtureRecord>& manifest) {
  atomic_write_file(path, [&](std::ostream& os) {
    for (const auto& r : manifest) os << record_to_json(r).dump() << '\n';
  });
}

inline std::vector<MixtureRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  SPECDEN_CHECK(is.is_open(), "cannot open manifest: " + path.string());
  std::vector<MixtureRecord> manifest;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    manifest.push_back(record_from_json(nlohmann::json::parse(line)));
  }
  return manifest;
}

}  // namespace specden

#endif  // SPECDEN_DATAGEN_HPP_
