// specden/dsp.hpp
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

#ifndef SPECDEN_DSP_HPP_
#define SPECDEN_DSP_HPP_

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "specden/common.hpp"
#include "specden/fft.hpp"
#include "specden/wav.hpp"

namespace specden {

// Analysis configuration. Defaults: 1024-point FFT, 25 ms periodic Hann
// window, 6.25 ms hop at 16 kHz. hop = win/4 gives exact COLA.
struct StftConfig {
  int fft_size = 1024;
  int win_length = 400;
  int hop_length = 100;

  int bins() const { return fft_size / 2 + 1; }

  void validate() const {
    SPECDEN_CHECK(fft_size > 0 && win_length > 0 && hop_length > 0,
                  "StftConfig fields must be positive");
    SPECDEN_CHECK(win_length <= fft_size, "win_length must be <= fft_size");
    SPECDEN_CHECK((fft_size & (fft_size - 1)) == 0, "fft_size must be a power of two");
  }
};

// Dense frames x cols real matrix, row-major.
struct RealMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  RealMatrix() = default;
  RealMatrix(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
};

struct ComplexSpectrogram {
  int frames = 0;
  int bins = 0;
  std::vector<std::complex<double>> v;  // row-major frames x bins
  StftConfig config;

  std::complex<double>& at(int f, int b) { return v[static_cast<size_t>(f) * bins + b]; }
  std::complex<double> at(int f, int b) const { return v[static_cast<size_t>(f) * bins + b]; }
};

// Natural-log power spectrogram: ln(|X|^2 + floor_eps).
struct LogPowerSpectrogram {
  RealMatrix values;  // frames x bins
  StftConfig config;
  double floor_eps = 1e-10;
};

struct PhaseMatrix {
  RealMatrix values;  // frames x bins, radians in (-pi, pi]
};

// Periodic Hann window: w[n] = 0.5 * (1 - cos(2 pi n / L)).
inline std::vector<double> make_window(const StftConfig& config) {
  config.validate();
  const int L = config.win_length;
  std::vector<double> w(L);
  for (int n = 0; n < L; ++n) w[n] = 0.5 * (1.0 - std::cos(2.0 * M_PI * n / L));
  return w;
}

namespace detail {

// Reflect-padded sample lookup: index may fall outside [0, n).
inline double reflect_sample(const std::vector<double>& x, long i) {
  const long n = static_cast<long>(x.size());
  if (n == 1) return x[0];
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return x[static_cast<size_t>(i)];
}

}  // namespace detail

// Center-padded STFT. Frame count = 1 + floor(len / hop); the win_length
// window sits centered inside the fft_size frame, remaining taps are zero.
inline ComplexSpectrogram stft(const Waveform& w, const StftConfig& config) {
  config.validate();
  SPECDEN_CHECK(!w.samples.empty(), "empty input");

  const int n_frames = 1 + static_cast<int>(w.samples.size() / config.hop_length);
  const int bins = config.bins();
  const int offset = (config.fft_size - config.win_length) / 2;
  const std::vector<double> win = make_window(config);

  ComplexSpectrogram out;
  out.frames = n_frames;
  out.bins = bins;
  out.config = config;
  out.v.resize(static_cast<size_t>(n_frames) * bins);

  FftPlan plan(config.fft_size);
  std::vector<std::complex<double>> buf(config.fft_size);
  const long pad = config.fft_size / 2;

  for (int f = 0; f < n_frames; ++f) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    const long start = static_cast<long>(f) * config.hop_length - pad;
    for (int n = 0; n < config.win_length; ++n) {
      double s = detail::reflect_sample(w.samples, start + offset + n);
      buf[offset + n] = s * win[n];
    }
    plan.forward(buf.data());
    for (int b = 0; b < bins; ++b) out.at(f, b) = buf[b];
  }
  return out;
}

inline LogPowerSpectrogram log_power(const ComplexSpectrogram& c, double floor_eps = 1e-10) {
  SPECDEN_CHECK(floor_eps > 0, "floor_eps must be positive");
  LogPowerSpectrogram out;
  out.values = RealMatrix(c.frames, c.bins);
  out.config = c.config;
  out.floor_eps = floor_eps;
  for (size_t i = 0; i < c.v.size(); ++i) out.values.v[i] = std::log(std::norm(c.v[i]) + floor_eps);
  return out;
}

// Elementwise argument; zero magnitude maps to phase 0.
inline PhaseMatrix phase_of(const ComplexSpectrogram& c) {
  PhaseMatrix out;
  out.values = RealMatrix(c.frames, c.bins);
  for (size_t i = 0; i < c.v.size(); ++i) {
    const auto& z = c.v[i];
    out.values.v[i] = (z == std::complex<double>(0.0, 0.0)) ? 0.0 : std::arg(z);
  }
  return out;
}

// Magnitude recovered from a log-power value.
inline double log_power_to_magnitude(double v, double floor_eps) {
  return std::sqrt(std::max(std::exp(v) - floor_eps, 0.0));
}

// Overlap-add synthesis with squared-window COLA normalization. Combines the
// magnitude implied by `s` with the phase matrix `p` and crops to out_len.
inline Waveform istft_with_phase(const LogPowerSpectrogram& s, const PhaseMatrix& p,
                                 const StftConfig& config, size_t out_len,
                                 int sample_rate = 16000) {
  config.validate();
  SPECDEN_CHECK(s.values.rows == p.values.rows && s.values.cols == p.values.cols,
                "log-power / phase dimension mismatch");
  SPECDEN_CHECK(s.values.cols == config.bins(), "bin count does not match config");
  SPECDEN_CHECK(out_len <= static_cast<size_t>(s.values.rows) * config.hop_length,
                "out_len exceeds frames * hop_length");

  const int n_frames = s.values.rows;
  const int bins = s.values.cols;
  const int offset = (config.fft_size - config.win_length) / 2;
  const std::vector<double> win = make_window(config);
  const long pad = config.fft_size / 2;
  const size_t total = static_cast<size_t>(n_frames - 1) * config.hop_length + config.fft_size;

  std::vector<double> acc(total, 0.0);
  std::vector<double> wsum(total, 0.0);

  FftPlan plan(config.fft_size);
  std::vector<std::complex<double>> buf(config.fft_size);

  for (int f = 0; f < n_frames; ++f) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    for (int b = 0; b < bins; ++b) {
      double mag = log_power_to_magnitude(s.values.at(f, b), s.floor_eps);
      std::complex<double> z = std::polar(mag, p.values.at(f, b));
      buf[b] = z;
      if (b > 0 && b < config.fft_size - b) buf[config.fft_size - b] = std::conj(z);
    }
    plan.inverse(buf.data());
    const size_t base = static_cast<size_t>(f) * config.hop_length;
    for (int n = 0; n < config.win_length; ++n) {
      acc[base + offset + n] += buf[offset + n].real() * win[n];
      wsum[base + offset + n] += win[n] * win[n];
    }
  }

  Waveform out;
  out.sample_rate = sample_rate;
  out.samples.resize(out_len);
  for (size_t i = 0; i < out_len; ++i) {
    size_t j = i + pad;
    out.samples[i] = (wsum[j] > 1e-12) ? acc[j] / wsum[j] : 0.0;
  }
  return out;
}

// Non-overlapping time chunks of a log-power spectrogram, with the top
// (Nyquist-side) columns split off so the model sees a bins_kept-wide input.
struct ChunkSet {
  int frames_per_chunk = 512;
  int bins_kept = 512;
  int total_frames = 0;
  std::vector<RealMatrix> chunks;     // each frames_per_chunk x bins_kept
  std::vector<int> offsets;           // first source frame of each chunk
  std::vector<int> valid_frames;      // valid rows in each chunk (rest zero pad)
  RealMatrix dropped;                 // total_frames x (bins - bins_kept)
  StftConfig config;
  double floor_eps = 1e-10;
};

inline ChunkSet chunk_spectrogram(const LogPowerSpectrogram& s, int frames_per_chunk = 512,
                                  int bins_kept = 512) {
  SPECDEN_CHECK(s.values.cols >= bins_kept, "spectrogram has fewer bins than bins_kept");
  SPECDEN_CHECK(s.values.rows >= frames_per_chunk,
                "spectrogram has fewer frames than frames_per_chunk");

  ChunkSet cs;
  cs.frames_per_chunk = frames_per_chunk;
  cs.bins_kept = bins_kept;
  cs.total_frames = s.values.rows;
  cs.config = s.config;
  cs.floor_eps = s.floor_eps;

  const int dropped_cols = s.values.cols - bins_kept;
  cs.dropped = RealMatrix(s.values.rows, dropped_cols);
  for (int r = 0; r < s.values.rows; ++r)
    for (int c = 0; c < dropped_cols; ++c) cs.dropped.at(r, c) = s.values.at(r, bins_kept + c);

  const int n_chunks = (s.values.rows + frames_per_chunk - 1) / frames_per_chunk;
  for (int k = 0; k < n_chunks; ++k) {
    const int off = k * frames_per_chunk;
    const int valid = std::min(frames_per_chunk, s.values.rows - off);
    RealMatrix m(frames_per_chunk, bins_kept);
    for (int r = 0; r < valid; ++r)
      for (int c = 0; c < bins_kept; ++c) m.at(r, c) = s.values.at(off + r, c);
    cs.chunks.push_back(std::move(m));
    cs.offsets.push_back(off);
    cs.valid_frames.push_back(valid);
  }
  return cs;
}

// Inverse of chunk_spectrogram (identity round trip).
inline LogPowerSpectrogram reassemble_chunks(const ChunkSet& cs) {
  LogPowerSpectrogram s;
  s.config = cs.config;
  s.floor_eps = cs.floor_eps;
  s.values = RealMatrix(cs.total_frames, cs.bins_kept + cs.dropped.cols);
  for (size_t k = 0; k < cs.chunks.size(); ++k) {
    for (int r = 0; r < cs.valid_frames[k]; ++r)
      for (int c = 0; c < cs.bins_kept; ++c)
        s.values.at(cs.offsets[k] + r, c) = cs.chunks[k].at(r, c);
  }
  for (int r = 0; r < cs.total_frames; ++r)
    for (int c = 0; c < cs.dropped.cols; ++c)
      s.values.at(r, cs.bins_kept + c) = cs.dropped.at(r, c);
  return s;
}

// ---- SPDN spectrogram container ----
// magic "SPDN", version u16, frames u32, bins u32, dtype u8 (0=f32, 1=f64),
// then row-major little-endian values.

inline void save_spectrogram(const std::filesystem::path& path, const LogPowerSpectrogram& s,
                             bool as_f64 = true) {
  atomic_write_file(path, [&](std::ostream& os) {
    write_bytes(os, "SPDN", 4);
    write_le<uint16_t>(os, 1);
    write_le<uint32_t>(os, static_cast<uint32_t>(s.values.rows));
    write_le<uint32_t>(os, static_cast<uint32_t>(s.values.cols));
    write_le<uint8_t>(os, as_f64 ? 1 : 0);
    if (as_f64) {
      write_bytes(os, s.values.v.data(), s.values.v.size() * sizeof(double));
    } else {
      for (double d : s.values.v) write_le<float>(os, static_cast<float>(d));
    }
  });
}

inline LogPowerSpectrogram load_spectrogram(const std::filesystem::path& path,
                                            const StftConfig& config = {},
                                            double floor_eps = 1e-10) {
  std::ifstream is(path, std::ios::binary);
  SPECDEN_CHECK(is.is_open(), "cannot open spectrogram file: " + path.string());
  char magic[4];
  read_bytes(is, magic, 4);
  SPECDEN_CHECK(std::memcmp(magic, "SPDN", 4) == 0, "bad spectrogram magic");
  uint16_t version = read_le<uint16_t>(is);
  SPECDEN_CHECK(version == 1, "unsupported spectrogram version");
  uint32_t rows = read_le<uint32_t>(is);
  uint32_t cols = read_le<uint32_t>(is);
  uint8_t dtype = read_le<uint8_t>(is);

  LogPowerSpectrogram s;
  s.config = config;
  s.floor_eps = floor_eps;
  s.values = RealMatrix(static_cast<int>(rows), static_cast<int>(cols));
  if (dtype == 1) {
    read_bytes(is, s.values.v.data(), s.values.v.size() * sizeof(double));
  } else if (dtype == 0) {
    for (auto& d : s.values.v) d = read_le<float>(is);
  } else {
    throw Error("unsupported spectrogram dtype code");
  }
  return s;
}

}  // namespace specden

#endif  // SPECDEN_DSP_HPP_
