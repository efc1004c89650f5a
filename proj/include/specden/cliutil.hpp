// specden/cliutil.hpp
//
// Small helpers shared between the command-line tool and its tests.
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

#ifndef SPECDEN_CLIUTIL_HPP_
#define SPECDEN_CLIUTIL_HPP_

#include <string>
#include <vector>

#include "specden/common.hpp"

namespace specden {

// "a:b:c" -> inclusive range a..b step c; a single number is a one-value grid.
inline std::vector<double> parse_snr_grid(const std::string& text) {
  std::vector<double> parts;
  size_t pos = 0;
  while (pos <= text.size()) {
    const size_t next = text.find(':', pos);
    const std::string tok = text.substr(pos, next == std::string::npos ? next : next - pos);
    SPECDEN_CHECK(!tok.empty(), "--snr-grid: empty field in '" + text + "'");
    size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    SPECDEN_CHECK(used == tok.size(), "--snr-grid: bad number '" + tok + "'");
    parts.push_back(value);
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  if (parts.size() == 1) return parts;
  SPECDEN_CHECK(parts.size() == 3, "--snr-grid: expected start:stop:step, got '" + text + "'");
  const double start = parts[0], stop = parts[1], step = parts[2];
  SPECDEN_CHECK(step > 0 && stop >= start, "--snr-grid: need stop >= start and step > 0");
  std::vector<double> grid;
  for (double v = start; v <= stop + 1e-9; v += step) grid.push_back(v);
  return grid;
}

}  // namespace specden

#endif  // SPECDEN_CLIUTIL_HPP_
