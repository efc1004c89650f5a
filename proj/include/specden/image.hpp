// specden/image.hpp
//
// Minimal deterministic PNG writer (zlib-compressed RGB8) and a spectrogram
// renderer: perceptually uniform colormap, time/frequency axis ticks drawn
// with a tiny built-in bitmap font.
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

#ifndef SPECDEN_IMAGE_HPP_
#define SPECDEN_IMAGE_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <zlib.h>

#include "specden/common.hpp"
#include "specden/dsp.hpp"

namespace specden {
namespace image {

struct Rgb {
  uint8_t r = 0, g = 0, b = 0;
};

struct Canvas {
  int width = 0, height = 0;
  std::vector<Rgb> px;

  Canvas(int w, int h, Rgb fill = {255, 255, 255}) : width(w), height(h), px(w * h, fill) {}
  void set(int x, int y, Rgb c) {
    if (x >= 0 && x < width && y >= 0 && y < height) px[static_cast<size_t>(y) * width + x] = c;
  }
};

namespace detail {

inline uint32_t crc32_of(const uint8_t* data, size_t n, uint32_t seed = 0) {
  return static_cast<uint32_t>(::crc32(seed, data, static_cast<uInt>(n)));
}

inline void put_u32be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

inline void put_chunk(std::vector<uint8_t>& out, const char type[4],
                      const std::vector<uint8_t>& payload) {
  put_u32be(out, static_cast<uint32_t>(payload.size()));
  std::vector<uint8_t> body(type, type + 4);
  body.insert(body.end(), payload.begin(), payload.end());
  out.insert(out.end(), body.begin(), body.end());
  put_u32be(out, crc32_of(body.data(), body.size()));
}

// 5x7 digit/punctuation glyphs for axis labels; each row is 5 bits, MSB left.
inline const uint8_t* glyph(char c) {
  static const uint8_t digits[13][7] = {
      {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},  // 0
      {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},  // 1
      {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},  // 2
      {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},  // 3
      {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},  // 4
      {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},  // 5
      {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},  // 6
      {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
      {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},  // 8
      {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},  // 9
      {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C},  // .
      {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00},  // -
      {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00},  // space
  };
  if (c >= '0' && c <= '9') return digits[c - '0'];
  if (c == '.') return digits[10];
  if (c == '-') return digits[11];
  return digits[12];
}

inline void draw_text(Canvas& cv, int x, int y, const std::string& text, Rgb color) {
  for (size_t k = 0; k < text.size(); ++k) {
    const uint8_t* g = glyph(text[k]);
    for (int row = 0; row < 7; ++row)
      for (int col = 0; col < 5; ++col)
        if (g[row] & (1 << (4 - col))) cv.set(x + static_cast<int>(k) * 6 + col, y + row, color);
  }
}

// Piecewise-linear approximation of a dark-blue -> green -> yellow map.
inline Rgb colormap(double t) {
  t = std::clamp(t, 0.0, 1.0);
  static const double anchors[9][3] = {
      {0.267, 0.005, 0.329}, {0.283, 0.141, 0.458}, {0.254, 0.265, 0.530},
      {0.207, 0.372, 0.553}, {0.164, 0.471, 0.558}, {0.128, 0.567, 0.551},
      {0.135, 0.659, 0.518}, {0.478, 0.821, 0.318}, {0.993, 0.906, 0.144}};
  const double pos = t * 8.0;
  const int i = std::min(static_cast<int>(pos), 7);
  const double f = pos - i;
  auto mixc = [&](int c) {
    return static_cast<uint8_t>(
        std::lround(255.0 * (anchors[i][c] * (1.0 - f) + anchors[i + 1][c] * f)));
  };
  return {mixc(0), mixc(1), mixc(2)};
}

}  // namespace detail

inline void write_png(const std::filesystem::path& path, const Canvas& cv) {
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(cv.height) * (1 + 3 * cv.width));
  for (int y = 0; y < cv.height; ++y) {
    raw.push_back(0);  // filter: none
    for (int x = 0; x < cv.width; ++x) {
      const Rgb& p = cv.px[static_cast<size_t>(y) * cv.width + x];
      raw.push_back(p.r);
      raw.push_back(p.g);
      raw.push_back(p.b);
    }
  }
  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> comp(comp_len);
  SPECDEN_CHECK(compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 9) ==
                    Z_OK,
                "png compression failed");
  comp.resize(comp_len);

  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  std::vector<uint8_t> ihdr;
  detail::put_u32be(ihdr, static_cast<uint32_t>(cv.width));
  detail::put_u32be(ihdr, static_cast<uint32_t>(cv.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: truecolor
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // interlace
  detail::put_chunk(out, "IHDR", ihdr);
  detail::put_chunk(out, "IDAT", comp);
  detail::put_chunk(out, "IEND", {});

  atomic_write_file(path, [&](std::ostream& os) {
    os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  });
}

// Renders a log-power spectrogram: frequency up the y axis, time along x,
// with second/kHz tick labels in the margins and a fixed display range.
inline void render_spectrogram_png(const std::filesystem::path& path,
                                   const LogPowerSpectrogram& spec, double db_floor = -80.0,
                                   double db_ceil = 20.0) {
  const int frames = static_cast<int>(spec.values.rows);
  const int bins = static_cast<int>(spec.values.cols);
  SPECDEN_CHECK(frames > 0 && bins > 0, "empty spectrogram");

  const int left = 40, bottom = 20, top = 8, right = 8;
  const int plot_w = std::min(frames, 2048), plot_h = bins;
  Canvas cv(left + plot_w + right, top + plot_h + bottom);

  // ln power -> dB, mapped through the colormap.
  for (int x = 0; x < plot_w; ++x) {
    const int t = static_cast<int>(static_cast<long>(x) * frames / plot_w);
    for (int b = 0; b < bins; ++b) {
      const double db = 10.0 * spec.values.at(t, b) / std::log(10.0);
      const double u = (db - db_floor) / (db_ceil - db_floor);
      cv.set(left + x, top + (plot_h - 1 - b), detail::colormap(u));
    }
  }

  const Rgb black{0, 0, 0};
  const double sr = 16000.0;
  const double total_s = static_cast<double>(frames) * spec.config.hop_length / sr;
  const double nyq_khz = sr / 2000.0;
  char buf[32];

  // time ticks every second (at most 8 labels)
  const double t_step = std::max(1.0, std::ceil(total_s / 8.0));
  for (double ts = 0.0; ts <= total_s + 1e-9; ts += t_step) {
    const int x = left + static_cast<int>(ts / total_s * (plot_w - 1));
    for (int dy = 0; dy < 4; ++dy) cv.set(x, top + plot_h + dy, black);
    std::snprintf(buf, sizeof(buf), "%g", ts);
    detail::draw_text(cv, x - 2, top + plot_h + 6, buf, black);
  }
  // frequency ticks every 2 kHz
  for (double f = 0.0; f <= nyq_khz + 1e-9; f += 2.0) {
    const int y = top + plot_h - 1 - static_cast<int>(f / nyq_khz * (plot_h - 1));
    for (int dx = 0; dx < 4; ++dx) cv.set(left - 1 - dx, y, black);
    std::snprintf(buf, sizeof(buf), "%g", f);
    detail::draw_text(cv, left - 24, y - 3, buf, black);
  }

  write_png(path, cv);
}

}  // namespace image
}  // namespace specden

#endif  // SPECDEN_IMAGE_HPP_
