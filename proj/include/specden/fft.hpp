// specden/fft.hpp
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

#ifndef SPECDEN_FFT_HPP_
#define SPECDEN_FFT_HPP_

#include <cmath>
#include <complex>
#include <vector>

#include "specden/common.hpp"

namespace specden {

// Iterative radix-2 FFT with precomputed twiddles and bit-reversal table.
// All transform sizes in this project are powers of two (1024 analysis,
// 512 for the intelligibility metric).
class FftPlan {
 public:
  explicit FftPlan(int n) : n_(n) {
    SPECDEN_CHECK(n > 0 && (n & (n - 1)) == 0, "FFT size must be a power of two");
    int log2n = 0;
    while ((1 << log2n) < n) ++log2n;
    bitrev_.resize(n);
    for (int i = 0; i < n; ++i) {
      int r = 0;
      for (int b = 0; b < log2n; ++b) r |= ((i >> b) & 1) << (log2n - 1 - b);
      bitrev_[i] = r;
    }
    twiddle_.resize(n / 2);
    for (int k = 0; k < n / 2; ++k) {
      double a = -2.0 * M_PI * k / n;
      twiddle_[k] = {std::cos(a), std::sin(a)};
    }
  }

  int size() const { return n_; }

  // In-place forward transform.
  void forward(std::complex<double>* x) const { transform(x, false); }

  // In-place inverse transform, including the 1/n scale.
  void inverse(std::complex<double>* x) const {
    transform(x, true);
    double s = 1.0 / n_;
    for (int i = 0; i < n_; ++i) x[i] *= s;
  }

 private:
  void transform(std::complex<double>* x, bool inv) const {
    const int n = n_;
    for (int i = 0; i < n; ++i) {
      int j = bitrev_[i];
      if (i < j) std::swap(x[i], x[j]);
    }
    for (int len = 2; len <= n; len <<= 1) {
      int half = len >> 1;
      int step = n / len;
      for (int i = 0; i < n; i += len) {
        for (int k = 0; k < half; ++k) {
          std::complex<double> w = twiddle_[k * step];
          if (inv) w = std::conj(w);
          std::complex<double> u = x[i + k];
          std::complex<double> v = x[i + k + half] * w;
          x[i + k] = u + v;
          x[i + k + half] = u - v;
        }
      }
    }
  }

  int n_;
  std::vector<int> bitrev_;
  std::vector<std::complex<double>> twiddle_;
};

}  // namespace specden

#endif  // SPECDEN_FFT_HPP_
