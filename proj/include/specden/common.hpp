// specden/common.hpp
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

#ifndef SPECDEN_COMMON_HPP_
#define SPECDEN_COMMON_HPP_

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace specden {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define SPECDEN_CHECK(cond, msg)                                  \
  do {                                                            \
    if (!(cond)) throw ::specden::Error(std::string(msg));        \
  } while (0)

// Structured log line to stderr: <iso-timestamp> <LEVEL> <event> k=v ...
inline void log_line(const char* level, const std::string& event,
                     const std::vector<std::pair<std::string, std::string>>& kv = {}) {
  std::time_t t = std::time(nullptr);
  char ts[32];
  std::strftime(ts, sizeof(ts), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  std::ostringstream os;
  os << ts << ' ' << level << ' ' << event;
  for (const auto& [k, v] : kv) os << ' ' << k << '=' << v;
  os << '\n';
  std::fputs(os.str().c_str(), stderr);
}

inline void log_info(const std::string& event,
                     const std::vector<std::pair<std::string, std::string>>& kv = {}) {
  log_line("INFO", event, kv);
}

inline void log_warn(const std::string& event,
                     const std::vector<std::pair<std::string, std::string>>& kv = {}) {
  log_line("WARN", event, kv);
}

// Derives an independent stream seed from a master seed and a stream index
// (splitmix64 finalizer).
inline uint64_t derive_seed(uint64_t master, uint64_t stream) {
  uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---- little-endian binary IO helpers (host assumed little-endian) ----

template <typename T>
void write_le(std::ostream& os, const T& v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  static_assert(std::is_trivially_copyable_v<T>);
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  SPECDEN_CHECK(static_cast<bool>(is), "unexpected end of stream");
  return v;
}

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& is, void* p, size_t n) {
  is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
  SPECDEN_CHECK(static_cast<bool>(is), "unexpected end of stream");
}

// Writes a file atomically: temp file in the same directory, then rename.
inline void atomic_write_file(const std::filesystem::path& path,
                              const std::function<void(std::ostream&)>& writer) {
  namespace fs = std::filesystem;
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    SPECDEN_CHECK(os.is_open(), "cannot open for writing: " + tmp.string());
    writer(os);
    os.flush();
    SPECDEN_CHECK(static_cast<bool>(os), "write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace specden

#endif  // SPECDEN_COMMON_HPP_
