// specden/metrics.hpp
//
// Objective evaluation: scale-invariant SDR on flattened log-power chunks,
// STOI on waveforms (standard published constants: 10 kHz internal rate,
// 256-sample frames zero-padded to a 512-point FFT, 15 one-third-octave
// bands from 150 Hz, 40 dB silent-frame removal, 384 ms segments with
// -15 dB clipping), per-manifest evaluation, and report emission.
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

#ifndef SPECDEN_METRICS_HPP_
#define SPECDEN_METRICS_HPP_

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "specden/datagen.hpp"
#include "specden/dsp.hpp"
#include "specden/trainer.hpp"

namespace specden {
namespace metrics {

// Scale-invariant signal-to-distortion ratio in dB, clamped to +-100 dB.
// Both vectors are mean-subtracted first; the estimate is projected onto the
// reference and the energy ratio of projection to residual is taken.
inline double si_sdr(const std::vector<double>& reference, const std::vector<double>& estimate) {
  SPECDEN_CHECK(reference.size() == estimate.size() && reference.size() >= 2,
                "si_sdr: need equal lengths >= 2");
  const size_t n = reference.size();
  double mr = std::accumulate(reference.begin(), reference.end(), 0.0) / n;
  double me = std::accumulate(estimate.begin(), estimate.end(), 0.0) / n;

  double dot = 0.0, ref_energy = 0.0, est_energy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double r = reference[i] - mr;
    const double e = estimate[i] - me;
    dot += e * r;
    ref_energy += r * r;
    est_energy += e * e;
  }
  SPECDEN_CHECK(ref_energy > 0.0, "si_sdr: zero reference after mean removal");
  if (est_energy == 0.0) return -100.0;

  const double alpha = dot / ref_energy;
  const double target_energy = alpha * alpha * ref_energy;
  // ||e - alpha r||^2 = ||e||^2 - alpha^2 ||r||^2
  const double residual_energy = std::max(est_energy - target_energy, 0.0);
  if (residual_energy <= 0.0 || target_energy / residual_energy >= 1e10) return 100.0;
  if (target_energy == 0.0) return -100.0;
  return std::clamp(10.0 * std::log10(target_energy / residual_energy), -100.0, 100.0);
}

// Spectral SI-SDR on one log-power chunk (flattened frames x bins matrix).
inline double spectral_si_sdr(const RealMatrix& reference, const RealMatrix& estimate) {
  return si_sdr(reference.v, estimate.v);
}

// ---- STOI ----

namespace stoi_detail {

constexpr int kFs = 10000;        // internal rate
constexpr int kFrame = 256;       // analysis frame
constexpr int kHop = 128;
constexpr int kFft = 512;
constexpr int kBands = 15;
constexpr double kMinFreq = 150;  // first one-third-octave band center
constexpr int kSegment = 30;      // frames per 384 ms comparison segment
constexpr double kBeta = -15.0;   // clipping SDR bound, dB
constexpr double kDynRange = 40.0;

inline double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double hx = x / 2.0;
  for (int k = 1; k < 64; ++k) {
    term *= (hx / k) * (hx / k);
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  return sum;
}

// Kaiser-windowed sinc low-pass, matching the common polyphase-resampler
// default (161 taps, beta 5.0 for a 5/8 ratio).
inline std::vector<double> design_lowpass(int up, int down, double beta = 5.0) {
  const int max_rate = std::max(up, down);
  const int half = 10 * max_rate;
  const int taps = 2 * half + 1;
  const double cutoff = 1.0 / max_rate;  // relative to upsampled Nyquist
  std::vector<double> h(taps);
  const double i0b = bessel_i0(beta);
  double sum = 0.0;
  for (int i = 0; i < taps; ++i) {
    const double m = i - half;
    const double sinc = (m == 0.0) ? cutoff : std::sin(M_PI * cutoff * m) / (M_PI * m);
    const double r = m / half;
    const double win = bessel_i0(beta * std::sqrt(std::max(1.0 - r * r, 0.0))) / i0b;
    h[i] = sinc * win;
    sum += h[i];
  }
  for (auto& v : h) v = v / sum * up;  // unity DC gain after upsampling
  return h;
}

// Polyphase rational resampling by up/down with a centered linear-phase filter.
inline std::vector<double> resample_poly(const std::vector<double>& x, int up, int down) {
  const std::vector<double> h = design_lowpass(up, down);
  const int half = (static_cast<int>(h.size()) - 1) / 2;
  const size_t out_len = (x.size() * up + down - 1) / down;
  std::vector<double> y(out_len, 0.0);
  for (size_t m = 0; m < out_len; ++m) {
    const long t = static_cast<long>(m) * down;  // upsampled-domain index
    for (long q = t - half; q <= t + half; ++q) {
      if (q < 0 || q % up != 0) continue;
      const long i = q / up;
      if (i >= static_cast<long>(x.size())) continue;
      y[m] += h[q - (t - half)] * x[i];
    }
  }
  return y;
}

inline std::vector<double> hann_frame_window() {
  // np.hanning(kFrame + 2)[1:-1]: symmetric Hann without the end zeros.
  std::vector<double> w(kFrame);
  for (int i = 0; i < kFrame; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * (i + 1) / (kFrame + 1));
  return w;
}

// One-third-octave band matrix: band j covers FFT bins whose frequencies are
// nearest the band edges 150 * 2^((2j-1)/6) .. 150 * 2^((2j+1)/6).
inline std::vector<std::pair<int, int>> third_octave_bins() {
  const int n_bins = kFft / 2 + 1;
  std::vector<std::pair<int, int>> bands(kBands);
  auto nearest_bin = [n_bins](double freq) {
    int best = 0;
    double best_d = std::numeric_limits<double>::max();
    for (int i = 0; i < n_bins; ++i) {
      const double f = static_cast<double>(i) * kFs / kFft;
      const double d = (f - freq) * (f - freq);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  };
  for (int j = 0; j < kBands; ++j) {
    const double lo = kMinFreq * std::pow(2.0, (2.0 * j - 1.0) / 6.0);
    const double hi = kMinFreq * std::pow(2.0, (2.0 * j + 1.0) / 6.0);
    bands[j] = {nearest_bin(lo), nearest_bin(hi)};  // [lo, hi)
  }
  return bands;
}

struct Frames {
  std::vector<std::vector<double>> rows;  // windowed frames
};

inline Frames frame_signal(const std::vector<double>& x) {
  const auto w = hann_frame_window();
  Frames f;
  if (x.size() < kFrame) return f;
  for (size_t start = 0; start + kFrame <= x.size(); start += kHop) {
    std::vector<double> fr(kFrame);
    for (int i = 0; i < kFrame; ++i) fr[i] = x[start + i] * w[i];
    f.rows.push_back(std::move(fr));
  }
  return f;
}

// Removes frames whose clean-signal energy is more than 40 dB below the
// loudest frame, then rebuilds both signals by overlap-add.
inline void remove_silent_frames(std::vector<double>& clean, std::vector<double>& degraded) {
  Frames fc = frame_signal(clean);
  Frames fd = frame_signal(degraded);
  SPECDEN_CHECK(!fc.rows.empty(), "no active frames");

  std::vector<double> energy_db(fc.rows.size());
  double max_db = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < fc.rows.size(); ++i) {
    double e = 0.0;
    for (double v : fc.rows[i]) e += v * v;
    energy_db[i] = 20.0 * std::log10(std::sqrt(e) + 1e-300);
    max_db = std::max(max_db, energy_db[i]);
  }

  std::vector<size_t> keep;
  for (size_t i = 0; i < fc.rows.size(); ++i)
    if (max_db - kDynRange - energy_db[i] < 0) keep.push_back(i);
  SPECDEN_CHECK(!keep.empty(), "no active frames");

  const size_t out_len = (keep.size() - 1) * kHop + kFrame;
  std::vector<double> oc(out_len, 0.0), od(out_len, 0.0);
  for (size_t k = 0; k < keep.size(); ++k) {
    for (int i = 0; i < kFrame; ++i) {
      oc[k * kHop + i] += fc.rows[keep[k]][i];
      od[k * kHop + i] += fd.rows[keep[k]][i];
    }
  }
  clean = std::move(oc);
  degraded = std::move(od);
}

// One-third-octave band envelope matrix (kBands x frames).
inline std::vector<std::vector<double>> band_envelopes(const std::vector<double>& x) {
  Frames f = frame_signal(x);
  const auto bands = third_octave_bins();
  FftPlan plan(kFft);
  std::vector<std::vector<double>> env(kBands, std::vector<double>(f.rows.size(), 0.0));
  std::vector<std::complex<double>> buf(kFft);
  for (size_t t = 0; t < f.rows.size(); ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    for (int i = 0; i < kFrame; ++i) buf[i] = f.rows[t][i];
    plan.forward(buf.data());
    for (int j = 0; j < kBands; ++j) {
      double acc = 0.0;
      for (int b = bands[j].first; b < bands[j].second; ++b) acc += std::norm(buf[b]);
      env[j][t] = std::sqrt(acc);
    }
  }
  return env;
}

}  // namespace stoi_detail

// Short-time objective intelligibility of `degraded` against `clean`.
// Inputs are equal-length waveforms; internal resampling to 10 kHz is part of
// the measure.
inline double stoi(const Waveform& clean, const Waveform& degraded) {
  SPECDEN_CHECK(clean.samples.size() == degraded.samples.size(), "stoi: length mismatch");
  SPECDEN_CHECK(clean.sample_rate == degraded.sample_rate, "stoi: sample rate mismatch");
  using namespace stoi_detail;

  std::vector<double> x = clean.samples, y = degraded.samples;
  if (clean.sample_rate != kFs) {
    const int g = std::gcd(clean.sample_rate, kFs);
    x = resample_poly(x, kFs / g, clean.sample_rate / g);
    y = resample_poly(y, kFs / g, clean.sample_rate / g);
  }
  remove_silent_frames(x, y);

  auto ex = band_envelopes(x);
  auto ey = band_envelopes(y);
  const int frames = static_cast<int>(ex[0].size());
  SPECDEN_CHECK(frames >= kSegment, "no active frames");

  const double clip = std::pow(10.0, -kBeta / 20.0);
  double acc = 0.0;
  long count = 0;
  for (int m = kSegment; m <= frames; ++m) {
    for (int j = 0; j < kBands; ++j) {
      const double* xs = &ex[j][m - kSegment];
      const double* ys = &ey[j][m - kSegment];
      double nx = 0.0, ny = 0.0;
      for (int i = 0; i < kSegment; ++i) {
        nx += xs[i] * xs[i];
        ny += ys[i] * ys[i];
      }
      const double alpha = std::sqrt(nx / std::max(ny, 1e-300));
      double yprime[kSegment];
      double mx = 0.0, my = 0.0;
      for (int i = 0; i < kSegment; ++i) {
        yprime[i] = std::min(ys[i] * alpha, xs[i] * (1.0 + clip));
        mx += xs[i];
        my += yprime[i];
      }
      mx /= kSegment;
      my /= kSegment;
      double dot = 0.0, vx = 0.0, vy = 0.0;
      for (int i = 0; i < kSegment; ++i) {
        const double a = xs[i] - mx;
        const double b = yprime[i] - my;
        dot += a * b;
        vx += a * a;
        vy += b * b;
      }
      if (vx > 0.0 && vy > 0.0) acc += dot / std::sqrt(vx * vy);
      else if (vx == 0.0 && vy == 0.0) acc += 1.0;  // both flat: identical segments
      ++count;
    }
  }
  return acc / count;
}

// ---- evaluation & reports ----

struct MetricRow {
  std::string mixture_id;
  double snr_db = 0.0;
  double si_sdr_in = 0.0;
  double si_sdr_out = 0.0;
  double stoi_in = 0.0;
  double stoi_out = 0.0;
};

struct MetricReport {
  std::string model_tag;
  std::string testset_tag;
  std::vector<MetricRow> rows;

  MetricRow aggregate() const {
    MetricRow a;
    a.mixture_id = "mean";
    for (const auto& r : rows) {
      a.snr_db += r.snr_db;
      a.si_sdr_in += r.si_sdr_in;
      a.si_sdr_out += r.si_sdr_out;
      a.stoi_in += r.stoi_in;
      a.stoi_out += r.stoi_out;
    }
    const double n = std::max<size_t>(rows.size(), 1);
    a.snr_db /= n;
    a.si_sdr_in /= n;
    a.si_sdr_out /= n;
    a.stoi_in /= n;
    a.stoi_out /= n;
    return a;
  }
};

// Per-utterance spectral SI-SDR: mean over the utterance's full chunks.
inline double mean_chunk_si_sdr(const LogPowerSpectrogram& reference,
                                const LogPowerSpectrogram& estimate, int frames_per_chunk,
                                int bins_kept) {
  ChunkSet cr = chunk_spectrogram(reference, frames_per_chunk, bins_kept);
  ChunkSet ce = chunk_spectrogram(estimate, frames_per_chunk, bins_kept);
  double acc = 0.0;
  long n = 0;
  for (size_t k = 0; k < cr.chunks.size(); ++k) {
    if (cr.valid_frames[k] != frames_per_chunk) continue;
    acc += spectral_si_sdr(cr.chunks[k], ce.chunks[k]);
    ++n;
  }
  SPECDEN_CHECK(n > 0, "no full chunks to evaluate");
  return acc / n;
}

// Evaluates an enhancer over a rendered test manifest. The enhancer maps a
// raw log-power chunk to an enhanced one (see model_chunk_enhancer).
inline MetricReport evaluate_with(const ChunkEnhancer& enhancer, const StftConfig& stft_cfg,
                                  double floor_eps, int frames_per_chunk, int bins_kept,
                                  const std::filesystem::path& manifest_path,
                                  const std::string& model_tag,
                                  const std::filesystem::path& enhanced_dir = {}) {
  auto records = load_manifest(manifest_path);
  const auto dir = manifest_path.parent_path();
  MetricReport report;
  report.model_tag = model_tag;
  report.testset_tag = manifest_path.stem().string();

  for (const auto& rec : records) {
    const auto noisy_path = dir / (rec.mixture_id + "_noisy.wav");
    const auto clean_path = dir / (rec.mixture_id + "_clean.wav");
    try {
      Waveform noisy = wavio::read(noisy_path);
      Waveform clean = wavio::read(clean_path);

      ComplexSpectrogram noisy_spec = stft(noisy, stft_cfg);
      LogPowerSpectrogram noisy_lp = log_power(noisy_spec, floor_eps);
      LogPowerSpectrogram clean_lp = log_power(stft(clean, stft_cfg), floor_eps);
      LogPowerSpectrogram enhanced_lp =
          enhance_spectra(noisy_lp, enhancer, frames_per_chunk, bins_kept);

      MetricRow row;
      row.mixture_id = rec.mixture_id;
      row.snr_db = rec.snr_db;
      row.si_sdr_in = mean_chunk_si_sdr(clean_lp, noisy_lp, frames_per_chunk, bins_kept);
      row.si_sdr_out = mean_chunk_si_sdr(clean_lp, enhanced_lp, frames_per_chunk, bins_kept);

      Waveform enhanced = istft_with_phase(enhanced_lp, phase_of(noisy_spec), stft_cfg,
                                           noisy.samples.size(), noisy.sample_rate);
      row.stoi_in = stoi(clean, noisy);
      row.stoi_out = stoi(clean, enhanced);
      if (!enhanced_dir.empty())
        wavio::write_pcm16(enhanced_dir / (rec.mixture_id + "_enhanced.wav"), enhanced);
      report.rows.push_back(row);
    } catch (const std::exception& e) {
      log_warn("evaluate_skip", {{"mixture", rec.mixture_id}, {"error", e.what()}});
    }
  }
  return report;
}

inline MetricReport evaluate(const Checkpoint& ckpt, const std::filesystem::path& manifest_path,
                             const std::filesystem::path& enhanced_dir = {}) {
  Model<float> model = model_from_checkpoint(ckpt);
  return evaluate_with(model_chunk_enhancer(model, ckpt.normalizer), ckpt.stft, ckpt.floor_eps,
                       ckpt.model_config.input_width, ckpt.model_config.input_height,
                       manifest_path, ckpt.model_config.variant_name(), enhanced_dir);
}

inline void save_report(const std::filesystem::path& csv_path, const MetricReport& report) {
  atomic_write_file(csv_path, [&](std::ostream& os) {
    os << "mixture_id,snr_db,si_sdr_in,si_sdr_out,stoi_in,stoi_out\n";
    char buf[256];
    auto emit = [&](const MetricRow& r) {
      std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.mixture_id.c_str(),
                    r.snr_db, r.si_sdr_in, r.si_sdr_out, r.stoi_in, r.stoi_out);
      os << buf;
    };
    for (const auto& r : report.rows) emit(r);
  });
}

inline void save_report_json(const std::filesystem::path& path, const MetricReport& report) {
  nlohmann::json j;
  j["model_tag"] = report.model_tag;
  j["testset_tag"] = report.testset_tag;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : report.rows)
    j["rows"].push_back({{"mixture_id", r.mixture_id},
                         {"snr_db", r.snr_db},
                         {"si_sdr_in", r.si_sdr_in},
                         {"si_sdr_out", r.si_sdr_out},
                         {"stoi_in", r.stoi_in},
                         {"stoi_out", r.stoi_out}});
  MetricRow a = report.aggregate();
  j["aggregate"] = {{"si_sdr_in", a.si_sdr_in},
                    {"si_sdr_out", a.si_sdr_out},
                    {"stoi_in", a.stoi_in},
                    {"stoi_out", a.stoi_out}};
  atomic_write_file(path, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
}

inline MetricReport load_report_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  SPECDEN_CHECK(is.is_open(), "cannot open report: " + path.string());
  nlohmann::json j = nlohmann::json::parse(is);
  MetricReport report;
  report.model_tag = j.at("model_tag").get<std::string>();
  report.testset_tag = j.at("testset_tag").get<std::string>();
  for (const auto& rj : j.at("rows")) {
    MetricRow r;
    r.mixture_id = rj.at("mixture_id").get<std::string>();
    r.snr_db = rj.at("snr_db").get<double>();
    r.si_sdr_in = rj.at("si_sdr_in").get<double>();
    r.si_sdr_out = rj.at("si_sdr_out").get<double>();
    r.stoi_in = rj.at("stoi_in").get<double>();
    r.stoi_out = rj.at("stoi_out").get<double>();
    report.rows.push_back(r);
  }
  return report;
}

// Combined table, rows = models (plus the "Input data" row computed from the
// noisy signals), columns = (SI-SDR, STOI) per test set. CSV plus an aligned
// text rendering.
inline void emit_tables(const std::vector<MetricReport>& reports,
                        const std::filesystem::path& out_path) {
  SPECDEN_CHECK(!reports.empty(), "emit_tables: no reports");
  std::vector<std::string> testsets;
  for (const auto& r : reports)
    if (std::find(testsets.begin(), testsets.end(), r.testset_tag) == testsets.end())
      testsets.push_back(r.testset_tag);

  struct TableRow {
    std::string model;
    // per test set: si_sdr, stoi (NaN when absent)
    std::vector<double> si_sdr, stoi;
  };
  std::vector<TableRow> rows;
  auto find_row = [&rows, &testsets](const std::string& model) -> TableRow& {
    for (auto& r : rows)
      if (r.model == model) return r;
    rows.push_back({model,
                    std::vector<double>(testsets.size(), std::nan("")),
                    std::vector<double>(testsets.size(), std::nan(""))});
    return rows.back();
  };

  for (const auto& rep : reports) {
    const size_t ti = std::find(testsets.begin(), testsets.end(), rep.testset_tag) -
                      testsets.begin();
    MetricRow a = rep.aggregate();
    TableRow& mr = find_row(rep.model_tag);
    mr.si_sdr[ti] = a.si_sdr_out;
    mr.stoi[ti] = a.stoi_out;
    TableRow& ir = find_row("input_data");
    ir.si_sdr[ti] = a.si_sdr_in;
    ir.stoi[ti] = a.stoi_in;
  }

  atomic_write_file(out_path, [&](std::ostream& os) {
    os << "model";
    for (const auto& t : testsets) os << ",si_sdr_db[" << t << "],stoi[" << t << "]";
    os << '\n';
    char buf[64];
    for (const auto& r : rows) {
      os << r.model;
      for (size_t ti = 0; ti < testsets.size(); ++ti) {
        auto cell = [&](double v) {
          if (std::isnan(v)) return std::string("");
          std::snprintf(buf, sizeof(buf), "%.4f", v);
          return std::string(buf);
        };
        os << ',' << cell(r.si_sdr[ti]) << ',' << cell(r.stoi[ti]);
      }
      os << '\n';
    }
  });

  // Aligned text table alongside the CSV.
  std::filesystem::path txt = out_path;
  txt.replace_extension(".txt");
  atomic_write_file(txt, [&](std::ostream& os) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-12s", "Model");
    os << buf;
    for (const auto& t : testsets) {
      std::snprintf(buf, sizeof(buf), " | %18s", (t + " SI-SDR/STOI").c_str());
      os << buf;
    }
    os << '\n';
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%-12s", r.model.c_str());
      os << buf;
      for (size_t ti = 0; ti < testsets.size(); ++ti) {
        if (std::isnan(r.si_sdr[ti]))
          std::snprintf(buf, sizeof(buf), " | %18s", "-");
        else
          std::snprintf(buf, sizeof(buf), " | %8.2f / %6.4f", r.si_sdr[ti], r.stoi[ti]);
        os << buf;
      }
      os << '\n';
    }
  });
}

}  // namespace metrics
}  // namespace specden

#endif  // SPECDEN_METRICS_HPP_
