// specden/tensor.hpp
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

#ifndef SPECDEN_TENSOR_HPP_
#define SPECDEN_TENSOR_HPP_

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "specden/common.hpp"

namespace specden {

// Dense 4-D tensor, NCHW row-major. Scalar is float on the training path and
// double in the finite-difference reference paths.
template <typename Scalar>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<Scalar> v;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        v(static_cast<size_t>(n_) * c_ * h_ * w_, Scalar(0)) {}

  size_t size() const { return v.size(); }
  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  Scalar& at(int b, int ch, int y, int x) {
    return v[((static_cast<size_t>(b) * c + ch) * h + y) * w + x];
  }
  Scalar at(int b, int ch, int y, int x) const {
    return v[((static_cast<size_t>(b) * c + ch) * h + y) * w + x];
  }

  void fill(Scalar s) { std::fill(v.begin(), v.end(), s); }

  template <typename Other>
  Tensor4<Other> cast() const {
    Tensor4<Other> o(n, c, h, w);
    for (size_t i = 0; i < v.size(); ++i) o.v[i] = static_cast<Other>(v[i]);
    return o;
  }

  static Tensor4 randn(int n, int c, int h, int w, uint64_t seed, Scalar stddev = 1) {
    Tensor4 t(n, c, h, w);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    for (auto& x : t.v) x = static_cast<Scalar>(d(rng)) * stddev;
    return t;
  }
};

}  // namespace specden

#endif  // SPECDEN_TENSOR_HPP_
