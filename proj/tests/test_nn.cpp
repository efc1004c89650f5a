// specden/tests/test_nn.cpp
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
#include <functional>
#include <random>

#include "specden/nn_ops.hpp"

using namespace specden;
using namespace specden::nn;
using T = Tensor4<double>;

namespace {

T randn_like(int n, int c, int h, int w, uint64_t seed, double scale = 1.0) {
  T t(n, c, h, w);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& v : t.v) v = dist(rng);
  return t;
}

double dot(const T& a, const T& b) {
  REQUIRE(a.same_shape(b));
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a.v[i] * b.v[i];
  return acc;
}

double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
}

// Central finite difference of loss() wrt one scalar parameter.
double fd(double& p, const std::function<double()>& loss, double h = 1e-5) {
  const double orig = p;
  p = orig + h;
  const double lp = loss();
  p = orig - h;
  const double lm = loss();
  p = orig;
  return (lp - lm) / (2.0 * h);
}

// Checks every element of `analytic` against finite differences of loss()
// taken through the corresponding element of `param`.
void check_grads(T& param, const T& analytic, const std::function<double()>& loss,
                 double tol = 1e-4) {
  REQUIRE(param.same_shape(analytic));
  for (size_t i = 0; i < param.size(); ++i)
    REQUIRE(rel_err(analytic.v[i], fd(param.v[i], loss)) < tol);
}

}  // namespace

TEST_CASE("conv2d identity kernel and hand example", "[nn]") {
  // 1x1 identity kernel reproduces the input plus bias
  T x = randn_like(1, 2, 4, 4, 1);
  ConvSpec sp;
  sp.in_channels = 2;
  sp.out_channels = 2;
  sp.kh = sp.kw = 1;
  T w(2, 2, 1, 1);
  w.at(0, 0, 0, 0) = 1.0;
  w.at(1, 1, 0, 0) = 1.0;
  T b(1, 2, 1, 1);
  b.v = {0.5, -0.25};
  T y = conv2d(x, sp, w, b);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 16; ++i)
      REQUIRE(y.v[c * 16 + i] == Catch::Approx(x.v[c * 16 + i] + b.v[c]));

  // 3x3 all-ones kernel on a constant image: interior = 9, corner = 4
  T ones(1, 1, 4, 4);
  ones.fill(1.0);
  ConvSpec s3;
  T w3(1, 1, 3, 3);
  w3.fill(1.0);
  T b0(1, 1, 1, 1);
  T y3 = conv2d(ones, s3, w3, b0);
  REQUIRE(y3.at(0, 0, 1, 1) == Catch::Approx(9.0));
  REQUIRE(y3.at(0, 0, 0, 0) == Catch::Approx(4.0));
  REQUIRE(y3.at(0, 0, 0, 1) == Catch::Approx(6.0));
}

TEST_CASE("conv2d matches brute force including stride and dilation", "[nn]") {
  for (uint64_t seed = 0; seed < 3; ++seed) {
    T x = randn_like(2, 3, 8, 8, 10 + seed);
    ConvSpec sp;
    sp.in_channels = 3;
    sp.out_channels = 2;
    sp.dh = 2;
    sp.dw = 2;
    sp.sh = (seed == 2) ? 2 : 1;
    sp.sw = sp.sh;
    T w = randn_like(2, 3, 3, 3, 20 + seed);
    T b = randn_like(1, 2, 1, 1, 30 + seed);
    T y = conv2d(x, sp, w, b);

    // brute force with explicit dilated taps
    const int ph = sp.pad_h(), pw = sp.pad_w();
    for (int bb = 0; bb < 2; ++bb)
      for (int co = 0; co < 2; ++co)
        for (int oy = 0; oy < y.h; ++oy)
          for (int ox = 0; ox < y.w; ++ox) {
            double acc = b.v[co];
            for (int ci = 0; ci < 3; ++ci)
              for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                  int iy = oy * sp.sh + ky * sp.dh - ph;
                  int ix = ox * sp.sw + kx * sp.dw - pw;
                  if (iy < 0 || iy >= 8 || ix < 0 || ix >= 8) continue;
                  acc += w.at(co, ci, ky, kx) * x.at(bb, ci, iy, ix);
                }
            REQUIRE(y.at(bb, co, oy, ox) == Catch::Approx(acc).margin(1e-12));
          }
  }
}

TEST_CASE("dilated conv equals conv with a zero-inflated kernel", "[nn]") {
  T x = randn_like(1, 2, 8, 8, 5);
  T w = randn_like(2, 2, 3, 3, 6);
  T b(1, 2, 1, 1);

  ConvSpec dil;
  dil.in_channels = dil.out_channels = 2;
  dil.dh = dil.dw = 2;
  T yd = conv2d(x, dil, w, b);

  // 3x3 kernel with dilation 2 == 5x5 kernel with zeros between taps
  ConvSpec big;
  big.in_channels = big.out_channels = 2;
  big.kh = big.kw = 5;
  T wbig(2, 2, 5, 5);
  for (int co = 0; co < 2; ++co)
    for (int ci = 0; ci < 2; ++ci)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) wbig.at(co, ci, 2 * ky, 2 * kx) = w.at(co, ci, ky, kx);
  T yb = conv2d(x, big, wbig, b);

  REQUIRE(yd.same_shape(yb));
  for (size_t i = 0; i < yd.size(); ++i) REQUIRE(yd.v[i] == Catch::Approx(yb.v[i]).margin(1e-12));
}

TEST_CASE("conv2d gradients match finite differences", "[nn][grad]") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    T x = randn_like(2, 3, 6, 6, 40 + seed);
    ConvSpec sp;
    sp.in_channels = 3;
    sp.out_channels = 2;
    sp.dh = sp.dw = (seed % 2) + 1;
    T w = randn_like(2, 3, 3, 3, 50 + seed, 0.5);
    T b = randn_like(1, 2, 1, 1, 60 + seed);
    T r = randn_like(2, 2, 6, 6, 70 + seed);  // random cotangent

    auto loss = [&]() { return dot(conv2d(x, sp, w, b), r); };
    auto g = conv2d_backward(x, sp, w, r);
    check_grads(x, g.gx, loss);
    check_grads(w, g.gw, loss);
    check_grads(b, g.gb, loss);
  }
}

TEST_CASE("depthwise conv and separable composition", "[nn]") {
  T x = randn_like(2, 3, 8, 8, 80);
  T dw = randn_like(3, 1, 3, 3, 81, 0.5);
  T db = randn_like(1, 3, 1, 1, 82);
  T pw = randn_like(4, 3, 1, 1, 83, 0.5);
  T pb = randn_like(1, 4, 1, 1, 84);

  // depthwise == grouped conv: brute force per channel
  T mid = depthwise_conv2d(x, 3, 3, 1, 1, dw, db);
  for (int bb = 0; bb < 2; ++bb)
    for (int c = 0; c < 3; ++c)
      for (int oy = 0; oy < 8; ++oy)
        for (int ox = 0; ox < 8; ++ox) {
          double acc = db.v[c];
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              int iy = oy + ky - 1, ix = ox + kx - 1;
              if (iy < 0 || iy >= 8 || ix < 0 || ix >= 8) continue;
              acc += dw.at(c, 0, ky, kx) * x.at(bb, c, iy, ix);
            }
          REQUIRE(mid.at(bb, c, oy, ox) == Catch::Approx(acc).margin(1e-12));
        }

  // separable == depthwise then pointwise, exactly
  T fused = depthwise_separable_conv(x, 3, 3, 1, 1, dw, db, pw, pb);
  ConvSpec pws;
  pws.in_channels = 3;
  pws.out_channels = 4;
  pws.kh = pws.kw = 1;
  T staged = conv2d(mid, pws, pw, pb);
  REQUIRE(fused.same_shape(staged));
  for (size_t i = 0; i < fused.size(); ++i)
    REQUIRE(fused.v[i] == Catch::Approx(staged.v[i]).margin(1e-12));
}

TEST_CASE("depthwise conv gradients match finite differences", "[nn][grad]") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    T x = randn_like(2, 3, 6, 6, 90 + seed);
    T w = randn_like(3, 1, 3, 3, 100 + seed, 0.5);
    T b = randn_like(1, 3, 1, 1, 110 + seed);
    T r = randn_like(2, 3, 6, 6, 120 + seed);
    const int d = (seed % 2) + 1;

    auto loss = [&]() { return dot(depthwise_conv2d(x, 3, 3, d, d, w, b), r); };
    auto g = depthwise_conv2d_backward(x, 3, 3, d, d, w, r);
    check_grads(x, g.gx, loss);
    check_grads(w, g.gw, loss);
    check_grads(b, g.gb, loss);
  }
}

TEST_CASE("transposed conv upsamples 2x and is the adjoint of its backward", "[nn]") {
  T x = randn_like(2, 3, 4, 4, 130);
  T w = randn_like(3, 2, 2, 2, 131, 0.5);
  T b(1, 2, 1, 1);
  T y = conv2d_transposed(x, w, b);
  REQUIRE(y.h == 8);
  REQUIRE(y.w == 8);

  // single input pixel scatters exactly its 2x2 kernel
  T one(1, 1, 1, 1);
  one.v = {1.0};
  T w1(1, 1, 2, 2);
  w1.v = {1.0, 2.0, 3.0, 4.0};
  T b1(1, 1, 1, 1);
  T y1 = conv2d_transposed(one, w1, b1);
  REQUIRE(y1.v == std::vector<double>{1.0, 2.0, 3.0, 4.0});

  // adjoint identity with zero bias: <A x, r> == <x, A^T r>
  T r = randn_like(2, 2, 8, 8, 132);
  auto g = conv2d_transposed_backward(x, w, r);
  REQUIRE(dot(y, r) == Catch::Approx(dot(x, g.gx)).epsilon(1e-9));
}

TEST_CASE("transposed conv gradients match finite differences", "[nn][grad]") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    T x = randn_like(2, 3, 4, 4, 140 + seed);
    T w = randn_like(3, 2, 2, 2, 150 + seed, 0.5);
    T b = randn_like(1, 2, 1, 1, 160 + seed);
    T r = randn_like(2, 2, 8, 8, 170 + seed);

    auto loss = [&]() { return dot(conv2d_transposed(x, w, b), r); };
    auto g = conv2d_transposed_backward(x, w, r);
    check_grads(x, g.gx, loss);
    check_grads(w, g.gw, loss);
    check_grads(b, g.gb, loss);
  }
}

TEST_CASE("maxpool picks maxima and routes gradient to first argmax", "[nn]") {
  T x(1, 1, 4, 4);
  x.v = {1, 2, 5, 5,
         3, 4, 5, 5,
         0, 0, 7, 8,
         0, 0, 9, 6};
  std::vector<int> argmax;
  T y = maxpool2(x, &argmax);
  REQUIRE(y.v == std::vector<double>{4, 5, 0, 9});
  // ties break to the first element in row-major window order: (0, 2)
  REQUIRE(argmax[1] == 2);

  T gy(1, 1, 2, 2);
  gy.v = {1.0, 2.0, 3.0, 4.0};
  T gx = maxpool2_backward(x, argmax, gy);
  REQUIRE(gx.at(0, 0, 1, 1) == 1.0);  // max 4
  REQUIRE(gx.at(0, 0, 0, 2) == 2.0);  // tie -> first 5
  REQUIRE(gx.at(0, 0, 2, 0) == 3.0);  // tie among zeros -> first
  REQUIRE(gx.at(0, 0, 3, 2) == 4.0);  // max 9
  double total = 0.0;
  for (double v : gx.v) total += v;
  REQUIRE(total == 10.0);
}

TEST_CASE("batchnorm normalizes batches and tracks running stats", "[nn]") {
  T x = randn_like(2, 3, 4, 4, 180);
  for (auto& v : x.v) v = 3.0 * v + 2.0;
  T gamma(1, 3, 1, 1), beta(1, 3, 1, 1), rm(1, 3, 1, 1), rv(1, 3, 1, 1);
  gamma.fill(1.0);
  rv.fill(1.0);
  BatchNormCache<double> cache;
  T y = batchnorm2d(x, gamma, beta, rm, rv, true, 0.1, 1e-5, &cache);

  const long m = 2 * 4 * 4;
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) mean += y.at(b, c, i, j);
    mean /= m;
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) var += (y.at(b, c, i, j) - mean) * (y.at(b, c, i, j) - mean);
    var /= m;
    REQUIRE(mean == Catch::Approx(0.0).margin(1e-10));
    REQUIRE(var == Catch::Approx(1.0).epsilon(1e-4));  // eps shifts it slightly

    // running stats: (1 - momentum) * init + momentum * batch stat (unbiased var)
    double bm = 0.0, bv = 0.0;
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) bm += x.at(b, c, i, j);
    bm /= m;
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) bv += (x.at(b, c, i, j) - bm) * (x.at(b, c, i, j) - bm);
    bv /= m;
    REQUIRE(rm.v[c] == Catch::Approx(0.1 * bm).margin(1e-12));
    REQUIRE(rv.v[c] == Catch::Approx(0.9 + 0.1 * bv * m / (m - 1)).margin(1e-12));
  }

  // eval mode is an affine map using running stats (no batch coupling)
  T x2 = randn_like(1, 3, 4, 4, 181);
  T ye = batchnorm2d(x2, gamma, beta, rm, rv, false);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 16; ++i) {
      double expect = (x2.v[c * 16 + i] - rm.v[c]) / std::sqrt(rv.v[c] + 1e-5);
      REQUIRE(ye.v[c * 16 + i] == Catch::Approx(expect).margin(1e-12));
    }
}

TEST_CASE("batchnorm gradients match finite differences", "[nn][grad]") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    T x = randn_like(2, 2, 4, 4, 190 + seed);
    T gamma = randn_like(1, 2, 1, 1, 200 + seed, 0.3);
    for (auto& v : gamma.v) v += 1.0;
    T beta = randn_like(1, 2, 1, 1, 210 + seed, 0.3);
    T r = randn_like(2, 2, 4, 4, 220 + seed);

    auto loss = [&]() {
      T rm(1, 2, 1, 1), rv(1, 2, 1, 1);
      rv.fill(1.0);
      return dot(batchnorm2d(x, gamma, beta, rm, rv, true), r);
    };
    T rm(1, 2, 1, 1), rv(1, 2, 1, 1);
    rv.fill(1.0);
    BatchNormCache<double> cache;
    batchnorm2d(x, gamma, beta, rm, rv, true, 0.1, 1e-5, &cache);
    auto g = batchnorm2d_backward(r, gamma, cache);
    check_grads(x, g.gx, loss, 1e-3);
    check_grads(gamma, g.ggamma, loss, 1e-3);
    check_grads(beta, g.gbeta, loss, 1e-3);
  }
}

TEST_CASE("prelu forward and gradients", "[nn][grad]") {
  T x(1, 2, 1, 2);
  x.v = {2.0, -4.0, -1.0, 3.0};
  T a(1, 2, 1, 1);
  a.v = {0.25, 0.5};
  T y = prelu(x, a);
  REQUIRE(y.v == std::vector<double>{2.0, -1.0, -0.5, 3.0});

  for (uint64_t seed = 0; seed < 5; ++seed) {
    T xr = randn_like(2, 3, 4, 4, 230 + seed);
    T ar = randn_like(1, 3, 1, 1, 240 + seed, 0.2);
    for (auto& v : ar.v) v += 0.25;
    T r = randn_like(2, 3, 4, 4, 250 + seed);
    auto loss = [&]() { return dot(prelu(xr, ar), r); };
    auto g = prelu_backward(xr, ar, r);
    check_grads(xr, g.gx, loss);
    check_grads(ar, g.ga, loss);
  }
}

TEST_CASE("concat and split are inverse", "[nn]") {
  T a = randn_like(2, 3, 4, 4, 260);
  T b = randn_like(2, 2, 4, 4, 261);
  T y = concat_channels(a, b);
  REQUIRE(y.c == 5);
  REQUIRE(y.at(1, 3, 2, 2) == b.at(1, 0, 2, 2));
  T ga, gb;
  split_channels(y, 3, ga, gb);
  REQUIRE(ga.v == a.v);
  REQUIRE(gb.v == b.v);
}

TEST_CASE("reparameterization statistics and determinism", "[nn]") {
  LatentStats<double> st;
  st.mu = T(1, 1, 1, 100000);
  st.log_var = T(1, 1, 1, 100000);
  st.mu.fill(0.7);
  st.log_var.fill(std::log(4.0));  // sigma = 2

  T z = reparameterize(st, 12345);
  double mean = 0.0;
  for (double v : z.v) mean += v;
  mean /= z.size();
  double var = 0.0;
  for (double v : z.v) var += (v - mean) * (v - mean);
  var /= z.size();
  REQUIRE(mean == Catch::Approx(0.7).margin(0.02));
  REQUIRE(var == Catch::Approx(4.0).margin(0.1));

  T z2 = reparameterize(st, 12345);
  REQUIRE(z.v == z2.v);
  T z3 = reparameterize(st, 54321);
  REQUIRE(z.v != z3.v);
}

TEST_CASE("reparameterization gradients incl. clamp boundary", "[nn][grad]") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    LatentStats<double> st;
    st.mu = randn_like(2, 1, 1, 6, 270 + seed);
    st.log_var = randn_like(2, 1, 1, 6, 280 + seed);
    st.log_var.v[0] = 25.0;   // outside clamp: zero gradient expected
    st.log_var.v[1] = -25.0;
    T r = randn_like(2, 1, 1, 6, 290 + seed);
    T eps;

    auto loss = [&]() { return dot(reparameterize(st, 999, &eps), r); };
    loss();  // populate eps
    T gmu, glv;
    reparameterize_backward(st, eps, r, gmu, glv);
    check_grads(st.mu, gmu, loss);
    check_grads(st.log_var, glv, loss);
    REQUIRE(glv.v[0] == 0.0);
    REQUIRE(glv.v[1] == 0.0);
  }
}

TEST_CASE("kl closed forms", "[nn]") {
  LatentStats<double> st;
  st.mu = T(1, 1, 1, 1);
  st.log_var = T(1, 1, 1, 1);
  REQUIRE(kl_standard_normal(st) == Catch::Approx(0.0).margin(1e-9));

  st.mu.v[0] = 1.0;
  REQUIRE(kl_standard_normal(st) == Catch::Approx(0.5).margin(1e-9));

  st.mu.v[0] = 0.0;
  st.log_var.v[0] = 1.0;
  REQUIRE(kl_standard_normal(st) == Catch::Approx((M_E - 2.0) / 2.0).margin(1e-9));

  // batch averaging: same stats duplicated across the batch leave KL unchanged
  LatentStats<double> st2;
  st2.mu = T(4, 1, 1, 1);
  st2.log_var = T(4, 1, 1, 1);
  for (int i = 0; i < 4; ++i) st2.mu.v[i] = 1.0;
  REQUIRE(kl_standard_normal(st2) == Catch::Approx(0.5).margin(1e-9));
}

TEST_CASE("kl gradients match finite differences", "[nn][grad]") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    LatentStats<double> st;
    st.mu = randn_like(2, 1, 2, 3, 300 + seed);
    st.log_var = randn_like(2, 1, 2, 3, 310 + seed);
    auto loss = [&]() { return 1.7 * kl_standard_normal(st); };
    T gmu, glv;
    kl_standard_normal_backward(st, 1.7, gmu, glv);
    check_grads(st.mu, gmu, loss);
    check_grads(st.log_var, glv, loss);
  }
}

TEST_CASE("mse oracle and gradient", "[nn][grad]") {
  T p(1, 1, 1, 4), t(1, 1, 1, 4);
  p.v = {1.0, 2.0, 3.0, 4.0};
  t.v = {1.0, 1.0, 5.0, 2.0};
  REQUIRE(mse(p, t) == Catch::Approx((0.0 + 1.0 + 4.0 + 4.0) / 4.0));

  for (uint64_t seed = 0; seed < 5; ++seed) {
    T pr = randn_like(2, 2, 3, 3, 320 + seed);
    T tr = randn_like(2, 2, 3, 3, 330 + seed);
    auto loss = [&]() { return 0.6 * mse(pr, tr); };
    T g = mse_backward(pr, tr, 0.6);
    check_grads(pr, g, loss);
  }
}
