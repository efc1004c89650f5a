// specden/tests/test_model.cpp
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
#include <random>

#include "specden/model.hpp"

using namespace specden;
using T = Tensor4<double>;

namespace {

T randn_input(int n, int h, int w, uint64_t seed) {
  T t(n, 1, h, w);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : t.v) v = dist(rng);
  return t;
}

ModelConfig tiny(const std::string& variant, int depth = 3, int c0 = 4, int hw = 32) {
  ModelConfig c = ModelConfig::from_variant(variant);
  c.depth_N = depth;
  c.base_channels = c0;
  c.input_height = hw;
  c.input_width = hw;
  return c;
}

}  // namespace

TEST_CASE("variant flag mapping", "[model]") {
  auto check = [](const std::string& v, bool var, bool skips, bool dil) {
    ModelConfig c = ModelConfig::from_variant(v);
    REQUIRE(c.variational == var);
    REQUIRE(c.skips == skips);
    REQUIRE(c.dilated == dil);
    REQUIRE(c.variant_name() == v);
  };
  check("ae", false, false, false);
  check("vae", true, false, false);
  check("dvae", true, false, true);
  check("unet", false, true, false);
  check("dunet", false, true, true);
  check("dvunet", true, true, true);
  REQUIRE_THROWS_AS(ModelConfig::from_variant("resnet"), Error);
}

TEST_CASE("encoder channel schedule", "[model]") {
  ModelConfig c = tiny("dunet", 4, 8, 64);
  REQUIRE(c.doubling_blocks() == 3);  // ceil((4+1)/2)
  auto e = c.encoder_channels();
  REQUIRE(e == std::vector<int>{1, 8, 16, 32, 32});

  ModelConfig c5 = tiny("ae", 5, 16, 32);
  auto e5 = c5.encoder_channels();
  REQUIRE(e5 == std::vector<int>{1, 16, 32, 64, 64, 64});  // 3 doubling blocks for N=5
}

TEST_CASE("default dilation schedule", "[model]") {
  ModelConfig c = tiny("dvae", 6, 4, 64);
  auto sched = c.effective_dilation_schedule();
  REQUIRE(sched.size() == 6);
  REQUIRE(sched[0] == std::make_pair(1, 1));
  REQUIRE(sched[1] == std::make_pair(2, 2));
  REQUIRE(sched[4] == std::make_pair(16, 16));
  REQUIRE(sched[5] == std::make_pair(16, 16));  // capped
}

TEST_CASE("config validation and json round trip", "[model]") {
  ModelConfig bad = tiny("ae", 3, 4, 30);  // 30 not divisible by 8
  REQUIRE_THROWS_AS(bad.validate(), Error);

  ModelConfig c = tiny("dvunet", 3, 8, 64);
  auto j = model_config_to_json(c);
  ModelConfig back = model_config_from_json(j);
  REQUIRE(back.depth_N == c.depth_N);
  REQUIRE(back.base_channels == c.base_channels);
  REQUIRE(back.variational == c.variational);
  REQUIRE(back.skips == c.skips);
  REQUIRE(back.dilated == c.dilated);
  REQUIRE(back.input_height == 64);
  REQUIRE(back.input_width == 64);
  REQUIRE(back.effective_dilation_schedule() == c.effective_dilation_schedule());
}

TEST_CASE("all six variants preserve input shape", "[model]") {
  for (const auto* v : {"ae", "vae", "dvae", "unet", "dunet", "dvunet"}) {
    auto m = build_model<double>(tiny(v), 42);
    T x = randn_input(2, 32, 32, 7);
    auto res = m.forward(x, false);
    REQUIRE(res.y.n == 2);
    REQUIRE(res.y.c == 1);
    REQUIRE(res.y.h == 32);
    REQUIRE(res.y.w == 32);
    REQUIRE(res.latent.has_value() == ModelConfig::from_variant(v).variational);
    for (double val : res.y.v) REQUIRE(std::isfinite(val));
  }
}

TEST_CASE("latent shape and eval determinism", "[model]") {
  ModelConfig c = tiny("vae", 3, 4, 32);
  auto m = build_model<double>(c, 11);
  T x = randn_input(2, 32, 32, 8);
  auto r1 = m.forward(x, false, 1);
  auto r2 = m.forward(x, false, 999);  // different seed, eval mode -> z = mu
  REQUIRE(r1.y.v == r2.y.v);

  REQUIRE(r1.latent->mu.n == 2);
  REQUIRE(r1.latent->mu.c == c.encoder_channels().back());
  REQUIRE(r1.latent->mu.h == 32 / 8);
  REQUIRE(r1.latent->mu.w == 32 / 8);

  // train mode samples: different seeds give different outputs
  auto t1 = m.forward(x, true, 1);
  auto t2 = m.forward(x, true, 2);
  REQUIRE(t1.y.v != t2.y.v);
}

TEST_CASE("same init seed gives identical parameters", "[model]") {
  auto a = build_model<double>(tiny("dvunet"), 77);
  auto b = build_model<double>(tiny("dvunet"), 77);
  auto pa = a.params(), pb = b.params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i]->name == pb[i]->name);
    REQUIRE(pa[i]->value.v == pb[i]->value.v);
  }
  auto c = build_model<double>(tiny("dvunet"), 78);
  REQUIRE(c.params()[0]->value.v != pa[0]->value.v);
}

TEST_CASE("parameter counts", "[model]") {
  // single 3x3 conv 1 -> 8 with bias
  std::mt19937_64 rng(1);
  nn::ConvSpec sp;
  sp.in_channels = 1;
  sp.out_channels = 8;
  nn::Conv2dLayer<double> conv("c", sp, rng);
  size_t n = 0;
  for (auto* p : conv.params()) n += p->value.size();
  REQUIRE(n == 80);

  // depthwise separable 32 -> 32, k = 3, with biases
  nn::SeparableConv2dLayer<double> sep("s", 32, 32, 3, 1, 1, rng);
  n = 0;
  for (auto* p : sep.params()) n += p->value.size();
  REQUIRE(n == 32 * 9 + 32 + 32 * 32 + 32);  // 1376

  // tiny U-Net ledger (depth 3, C0 = 8, skips): independent per-layer sums.
  // encoder: [1->8, 8->16 standard; 16->16 separable], each unit conv+bn+prelu
  auto unit_std = [](int ci, int co) { return ci * co * 9 + co + 2 * co + co; };
  auto unit_sep = [](int ci, int co) { return ci * 9 + ci + ci * co + co + 2 * co + co; };
  auto up = [](int ci, int co) { return ci * co * 4 + co; };
  const size_t ledger =
      unit_std(1, 8) + unit_std(8, 8) +        // enc1
      unit_std(8, 16) + unit_std(16, 16) +     // enc2
      unit_sep(16, 16) + unit_sep(16, 16) +    // enc3 (separable)
      (16 * 16 + 16) +                         // bottleneck 1x1
      up(32, 16) + unit_sep(16, 16) * 2 +      // dec1 (skip concat 16+16)
      up(32, 8) + unit_std(8, 8) * 2 +         // dec2 (16 + skip 16)
      up(16, 8) + unit_std(8, 8) * 2 +         // dec3 (8 + skip 8)
      (8 + 1);                                 // out 1x1 conv
  auto m = build_model<double>(tiny("unet", 3, 8, 32), 3);
  REQUIRE(m.count_params() == ledger);
}

TEST_CASE("zeroed final conv maps everything to zero", "[model]") {
  auto m = build_model<double>(tiny("ae"), 5);
  for (auto* p : m.params())
    if (p->name.rfind("out.conv", 0) == 0) p->value.fill(0.0);
  T x = randn_input(1, 32, 32, 9);
  auto res = m.forward(x, false);
  for (double v : res.y.v) REQUIRE(v == 0.0);
}

TEST_CASE("skip paths carry information around a dead bottleneck", "[model]") {
  // Zero the bottleneck projection; a skip model still reacts to the input,
  // a non-skip model collapses to a constant map.
  for (const auto* v : {"unet", "ae"}) {
    auto m = build_model<double>(tiny(v), 13);
    for (auto* p : m.params())
      if (p->name.rfind("bottleneck.", 0) == 0) p->value.fill(0.0);
    T x1 = randn_input(1, 32, 32, 21);
    T x2 = randn_input(1, 32, 32, 22);
    auto y1 = m.forward(x1, false);
    auto y2 = m.forward(x2, false);
    double max_diff = 0.0;
    for (size_t i = 0; i < y1.y.size(); ++i)
      max_diff = std::max(max_diff, std::fabs(y1.y.v[i] - y2.y.v[i]));
    if (std::string(v) == "unet")
      REQUIRE(max_diff > 1e-6);
    else
      REQUIRE(max_diff == Catch::Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("no NaN on log-power-range inputs", "[model]") {
  auto m = build_model<double>(tiny("dvunet"), 23);
  T x(1, 1, 32, 32);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> dist(-25.0, 5.0);
  for (auto& v : x.v) v = dist(rng);
  auto res = m.forward(x, false);
  for (double v : res.y.v) REQUIRE(std::isfinite(v));
}

TEST_CASE("chunk/tensor adapters and enhance_chunk", "[model]") {
  RealMatrix chunk(16, 32);  // frames x bins
  for (size_t i = 0; i < chunk.v.size(); ++i) chunk.v[i] = 0.01 * i;
  T t = chunk_to_tensor<double>(chunk);
  REQUIRE(t.h == 32);  // frequency up
  REQUIRE(t.w == 16);
  REQUIRE(t.at(0, 0, 5, 3) == chunk.at(3, 5));
  RealMatrix back = tensor_to_chunk(t);
  REQUIRE(back.v == chunk.v);

  ModelConfig c = tiny("unet", 2, 2, 0);
  c.input_height = 32;  // bins
  c.input_width = 16;   // frames
  auto m = build_model<double>(c, 31);
  RealMatrix out = enhance_chunk(m, chunk);
  REQUIRE(out.rows == 16);
  REQUIRE(out.cols == 32);

  RealMatrix wrong(8, 32);
  REQUIRE_THROWS_AS(enhance_chunk(m, wrong), Error);
}

TEST_CASE("end-to-end gradients match finite differences", "[model][grad]") {
  // depth 2, C0 = 2, 16x16 inputs; all six variants, spot-checked parameters.
  for (const auto* variant : {"ae", "dvunet"}) {
    ModelConfig cfg = tiny(variant, 2, 2, 16);
    cfg.kl_weight = 0.1;
    auto m = build_model<double>(cfg, 101);
    T x = randn_input(2, 16, 16, 102);
    T target = randn_input(2, 16, 16, 103);
    const uint64_t rng_seed = 55;

    auto loss = [&]() {
      auto res = m.forward(x, true, rng_seed);
      double l = nn::mse(res.y, target);
      if (res.latent) l += cfg.kl_weight * nn::kl_standard_normal(*res.latent);
      return l;
    };

    m.zero_grad();
    auto res = m.forward(x, true, rng_seed);
    T gy = nn::mse_backward(res.y, target);
    T gin;
    if (res.latent) {
      T gmu, glv;
      nn::kl_standard_normal_backward(*res.latent, cfg.kl_weight, gmu, glv);
      gin = m.backward(gy, gmu, glv);
    } else {
      gin = m.backward(gy);
    }

    // input gradient: a handful of elements
    std::mt19937_64 pick(9);
    for (int k = 0; k < 6; ++k) {
      size_t i = pick() % x.size();
      const double orig = x.v[i];
      const double h = 1e-5;
      x.v[i] = orig + h;
      const double lp = loss();
      x.v[i] = orig - h;
      const double lm = loss();
      x.v[i] = orig;
      const double fd = (lp - lm) / (2 * h);
      REQUIRE(std::fabs(gin.v[i] - fd) / std::max({1.0, std::fabs(fd)}) < 1e-3);
    }

    // parameter gradients: a few elements of every parameter tensor
    for (auto* p : m.params()) {
      if (!p->trainable) continue;
      for (int k = 0; k < 2; ++k) {
        size_t i = pick() % p->value.size();
        const double orig = p->value.v[i];
        const double h = 1e-5;
        p->value.v[i] = orig + h;
        const double lp = loss();
        p->value.v[i] = orig - h;
        const double lm = loss();
        p->value.v[i] = orig;
        const double fd = (lp - lm) / (2 * h);
        REQUIRE(std::fabs(p->grad.v[i] - fd) / std::max({1.0, std::fabs(fd), std::fabs(p->grad.v[i])}) <
                1e-3);
      }
    }
  }
}
