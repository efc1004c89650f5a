// specden/wav.hpp
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

#ifndef SPECDEN_WAV_HPP_
#define SPECDEN_WAV_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "specden/common.hpp"

namespace specden {

// Mono time-domain signal; samples nominally in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  size_t size() const { return samples.size(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

namespace wavio {

// Reads a RIFF/WAVE file. Supported: mono, 16-bit PCM or 32-bit float.
inline Waveform read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  SPECDEN_CHECK(is.is_open(), "cannot open WAV file: " + path.string());

  char magic[4];
  read_bytes(is, magic, 4);
  SPECDEN_CHECK(std::memcmp(magic, "RIFF", 4) == 0, "not a RIFF file: " + path.string());
  (void)read_le<uint32_t>(is);  // riff size
  read_bytes(is, magic, 4);
  SPECDEN_CHECK(std::memcmp(magic, "WAVE", 4) == 0, "not a WAVE file: " + path.string());

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  Waveform w;

  while (is.peek() != EOF) {
    char id[4];
    is.read(id, 4);
    if (!is) break;
    uint32_t chunk_size = read_le<uint32_t>(is);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      format = read_le<uint16_t>(is);
      channels = read_le<uint16_t>(is);
      rate = read_le<uint32_t>(is);
      (void)read_le<uint32_t>(is);  // byte rate
      (void)read_le<uint16_t>(is);  // block align
      bits = read_le<uint16_t>(is);
      if (chunk_size > 16) is.seekg(chunk_size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      SPECDEN_CHECK(have_fmt, "WAV data chunk before fmt chunk: " + path.string());
      SPECDEN_CHECK(channels == 1, "WAV must be mono: " + path.string());
      w.sample_rate = static_cast<int>(rate);
      if (format == 1 && bits == 16) {
        size_t n = chunk_size / 2;
        std::vector<int16_t> raw(n);
        read_bytes(is, raw.data(), chunk_size);
        w.samples.resize(n);
        for (size_t i = 0; i < n; ++i) w.samples[i] = raw[i] / 32768.0;
      } else if (format == 3 && bits == 32) {
        size_t n = chunk_size / 4;
        std::vector<float> raw(n);
        read_bytes(is, raw.data(), chunk_size);
        w.samples.assign(raw.begin(), raw.end());
      } else {
        throw Error("unsupported WAV encoding (need 16-bit PCM or 32-bit float): " +
                    path.string());
      }
      return w;
    } else {
      is.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
    }
  }
  throw Error("WAV file has no data chunk: " + path.string());
}

// Writes 16-bit PCM, atomically.
inline void write_pcm16(const std::filesystem::path& path, const Waveform& w) {
  atomic_write_file(path, [&](std::ostream& os) {
    uint32_t n = static_cast<uint32_t>(w.samples.size());
    uint32_t data_size = n * 2;
    write_bytes(os, "RIFF", 4);
    write_le<uint32_t>(os, 36 + data_size);
    write_bytes(os, "WAVE", 4);
    write_bytes(os, "fmt ", 4);
    write_le<uint32_t>(os, 16);
    write_le<uint16_t>(os, 1);  // PCM
    write_le<uint16_t>(os, 1);  // mono
    write_le<uint32_t>(os, static_cast<uint32_t>(w.sample_rate));
    write_le<uint32_t>(os, static_cast<uint32_t>(w.sample_rate) * 2);
    write_le<uint16_t>(os, 2);
    write_le<uint16_t>(os, 16);
    write_bytes(os, "data", 4);
    write_le<uint32_t>(os, data_size);
    for (uint32_t i = 0; i < n; ++i) {
      double v = std::clamp(w.samples[i], -1.0, 1.0);
      auto q = static_cast<int16_t>(std::lrint(v * 32767.0));
      write_le<int16_t>(os, q);
    }
  });
}

}  // namespace wavio
}  // namespace specden

#endif  // SPECDEN_WAV_HPP_
