// specden/model.hpp
//
// Assembles the six ablation architectures (AE, VAE, DVAE, UNET, DUNET,
// DVUNET) from shared encoder/decoder blocks and a deterministic or
// variational bottleneck.
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

#ifndef SPECDEN_MODEL_HPP_
#define SPECDEN_MODEL_HPP_

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "specden/dsp.hpp"
#include "specden/layers.hpp"

namespace specden {

struct ModelConfig {
  int depth_N = 5;
  int base_channels = 16;
  bool variational = false;
  bool skips = false;
  bool dilated = false;
  std::vector<std::pair<int, int>> dilation_schedule;  // per encoder block
  double kl_weight = 1e-3;
  int input_height = 512;  // frequency bins
  int input_width = 512;   // time frames

  // Variant letters: v = variational, u = skip connections, d = dilated.
  static ModelConfig from_variant(const std::string& variant) {
    ModelConfig c;
    if (variant == "ae") {
    } else if (variant == "vae") {
      c.variational = true;
    } else if (variant == "dvae") {
      c.variational = true;
      c.dilated = true;
    } else if (variant == "unet") {
      c.skips = true;
    } else if (variant == "dunet") {
      c.skips = true;
      c.dilated = true;
    } else if (variant == "dvunet") {
      c.variational = true;
      c.skips = true;
      c.dilated = true;
    } else {
      throw Error("unknown model variant: " + variant +
                  " (expected ae|vae|dvae|unet|dunet|dvunet)");
    }
    return c;
  }

  std::string variant_name() const {
    std::string s;
    if (dilated) s += "d";
    if (variational) s += "v";
    s += skips ? "unet" : "ae";
    return s;
  }

  // Default dilation: 2^min(i-1, 4) for encoder block i, same rate along
  // frequency and time.
  std::vector<std::pair<int, int>> effective_dilation_schedule() const {
    if (!dilation_schedule.empty()) return dilation_schedule;
    std::vector<std::pair<int, int>> sched;
    for (int i = 1; i <= depth_N; ++i) {
      int d = 1 << std::min(i - 1, 4);
      sched.emplace_back(d, d);
    }
    return sched;
  }

  // Encoder output channels per block: the first ceil((N+1)/2) blocks double
  // the width, the rest keep it (depthwise separable blocks).
  int doubling_blocks() const { return (depth_N + 2) / 2; }  // ceil((N+1)/2)
  std::vector<int> encoder_channels() const {
    std::vector<int> e(depth_N + 1);
    e[0] = 1;
    for (int i = 1; i <= depth_N; ++i)
      e[i] = base_channels << (std::min(i, doubling_blocks()) - 1);
    return e;
  }

  void validate() const {
    SPECDEN_CHECK(depth_N >= 1, "ModelConfig: depth_N must be >= 1");
    SPECDEN_CHECK(base_channels >= 1, "ModelConfig: base_channels must be >= 1");
    SPECDEN_CHECK(kl_weight >= 0, "ModelConfig: kl_weight must be >= 0");
    SPECDEN_CHECK(input_height % (1 << depth_N) == 0 && input_width % (1 << depth_N) == 0,
                  "ModelConfig: input dims must be divisible by 2^depth_N");
    if (dilated && !dilation_schedule.empty())
      SPECDEN_CHECK(static_cast<int>(dilation_schedule.size()) == depth_N,
                    "ModelConfig: dilation_schedule length must equal depth_N");
  }
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["depth_N"] = c.depth_N;
  j["base_channels"] = c.base_channels;
  j["variational"] = c.variational;
  j["skips"] = c.skips;
  j["dilated"] = c.dilated;
  nlohmann::json sched = nlohmann::json::array();
  for (auto [dh, dw] : c.effective_dilation_schedule()) sched.push_back({dh, dw});
  j["dilation_schedule"] = sched;
  j["kl_weight"] = c.kl_weight;
  j["input_shape"] = {1, c.input_height, c.input_width};
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.depth_N = j.at("depth_N").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.variational = j.at("variational").get<bool>();
  c.skips = j.at("skips").get<bool>();
  c.dilated = j.at("dilated").get<bool>();
  c.dilation_schedule.clear();
  for (const auto& p : j.at("dilation_schedule"))
    c.dilation_schedule.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
  c.kl_weight = j.at("kl_weight").get<double>();
  auto shape = j.at("input_shape");
  c.input_height = shape.at(1).get<int>();
  c.input_width = shape.at(2).get<int>();
  return c;
}

template <typename S>
class Model {
 public:
  Model(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(init_seed);
    const auto e = cfg_.encoder_channels();
    const auto sched = cfg_.effective_dilation_schedule();
    const int N = cfg_.depth_N;
    const int M = cfg_.doubling_blocks();

    for (int i = 1; i <= N; ++i) {
      const bool separable = i > M;
      const auto [dh, dw] = sched[i - 1];
      enc_.push_back(std::make_unique<nn::ConvBlock<S>>(
          "enc" + std::to_string(i) + ".conv", e[i - 1], e[i], separable, cfg_.dilated, dh,
          dw, rng));
    }

    nn::ConvSpec one;
    one.kh = one.kw = 1;
    one.in_channels = one.out_channels = e[N];
    if (cfg_.variational) {
      bott_mu_ = std::make_unique<nn::Conv2dLayer<S>>("bottleneck.mu", one, rng);
      bott_lv_ = std::make_unique<nn::Conv2dLayer<S>>("bottleneck.logvar", one, rng);
    } else {
      bott_ = std::make_unique<nn::Conv2dLayer<S>>("bottleneck.proj", one, rng);
    }

    for (int j = 1; j <= N; ++j) {
      const int l = N - j + 1;  // encoder level this block mirrors
      const int in_ch = (j == 1 ? e[N] : dec_out_ch_.back()) + (cfg_.skips ? e[l] : 0);
      const int out_ch = (l >= 2) ? e[l - 1] : cfg_.base_channels;
      dec_out_ch_.push_back(out_ch);
      up_.push_back(std::make_unique<nn::ConvTranspose2x2Layer<S>>(
          "dec" + std::to_string(j) + ".up", in_ch, out_ch, rng));
      const bool separable = l > M;
      const auto [dh, dw] = sched[l - 1];
      dec_.push_back(std::make_unique<nn::ConvBlock<S>>(
          "dec" + std::to_string(j) + ".conv", out_ch, out_ch, separable, cfg_.dilated, dh,
          dw, rng));
    }

    nn::ConvSpec out_spec;
    out_spec.kh = out_spec.kw = 1;
    out_spec.in_channels = cfg_.base_channels;
    out_spec.out_channels = 1;
    out_conv_ = std::make_unique<nn::Conv2dLayer<S>>("out.conv", out_spec, rng);
  }

  const ModelConfig& config() const { return cfg_; }

  std::vector<nn::Param<S>*> params() {
    std::vector<nn::Param<S>*> out;
    auto add = [&out](std::vector<nn::Param<S>*> ps) {
      for (auto* p : ps) out.push_back(p);
    };
    for (auto& b : enc_) add(b->params());
    if (bott_) add(bott_->params());
    if (bott_mu_) add(bott_mu_->params());
    if (bott_lv_) add(bott_lv_->params());
    for (size_t j = 0; j < up_.size(); ++j) {
      add(up_[j]->params());
      add(dec_[j]->params());
    }
    add(out_conv_->params());
    return out;
  }

  void zero_grad() {
    for (auto* p : params())
      if (p->trainable) p->zero_grad();
  }

  // Total trainable scalar parameter count.
  size_t count_params() {
    size_t n = 0;
    for (auto* p : params())
      if (p->trainable) n += p->value.size();
    return n;
  }

  struct ForwardResult {
    Tensor4<S> y;
    std::optional<nn::LatentStats<S>> latent;
  };

  // Train mode samples z via reparameterization (seeded); eval mode uses
  // z = mu, so variational inference is deterministic.
  ForwardResult forward(const Tensor4<S>& x, bool train, uint64_t rng_seed = 0) {
    SPECDEN_CHECK(x.c == 1 && x.h == cfg_.input_height && x.w == cfg_.input_width,
                  "Model::forward: input shape mismatch");
    const int N = cfg_.depth_N;
    train_ = train;
    skips_out_.assign(N + 1, Tensor4<S>());
    pool_argmax_.assign(N, {});
    pool_in_shapes_.assign(N, {0, 0, 0, 0});

    Tensor4<S> cur = x;
    for (int i = 1; i <= N; ++i) {
      cur = enc_[i - 1]->forward(cur, train);
      pool_in_shapes_[i - 1] = {cur.n, cur.c, cur.h, cur.w};
      cur = nn::maxpool2(cur, &pool_argmax_[i - 1]);
      if (cfg_.skips) skips_out_[i] = cur;  // post-pool residual copy
    }

    ForwardResult res;
    if (cfg_.variational) {
      Tensor4<S> mu = bott_mu_->forward(cur);
      Tensor4<S> lv = bott_lv_->forward(cur);
      for (auto& v : lv.v) v = nn::clamp_log_var(v);
      nn::LatentStats<S> latent{mu, lv};
      if (train) {
        cur = nn::reparameterize(latent, rng_seed, &eps_);
      } else {
        cur = mu;
      }
      latent_ = latent;
      res.latent = latent;
    } else {
      cur = bott_->forward(cur);
    }

    for (int j = 1; j <= N; ++j) {
      const int l = N - j + 1;
      if (cfg_.skips) {
        concat_prev_ch_[j - 1] = cur.c;
        cur = nn::concat_channels(cur, skips_out_[l]);
      }
      cur = up_[j - 1]->forward(cur);
      cur = dec_[j - 1]->forward(cur, train);
    }
    res.y = out_conv_->forward(cur);
    return res;
  }

  // Backward through the whole graph. gmu/glv carry the external (KL)
  // gradient on the latent stats; pass empty tensors for non-variational
  // models. Returns the gradient w.r.t. the input.
  Tensor4<S> backward(const Tensor4<S>& gy, const Tensor4<S>& gmu_ext = {},
                      const Tensor4<S>& glv_ext = {}) {
    const int N = cfg_.depth_N;
    std::vector<Tensor4<S>> skip_grads(N + 1);

    Tensor4<S> g = out_conv_->backward(gy);
    for (int j = N; j >= 1; --j) {
      const int l = N - j + 1;
      g = dec_[j - 1]->backward(g);
      g = up_[j - 1]->backward(g);
      if (cfg_.skips) {
        Tensor4<S> gprev, gskip;
        nn::split_channels(g, concat_prev_ch_[j - 1], gprev, gskip);
        skip_grads[l] = std::move(gskip);
        g = std::move(gprev);
      }
    }

    if (cfg_.variational) {
      Tensor4<S> gmu, glv;
      if (train_) {
        nn::reparameterize_backward(latent_, eps_, g, gmu, glv);
      } else {
        gmu = g;  // eval path: z = mu
        glv = Tensor4<S>(g.n, g.c, g.h, g.w);
      }
      if (gmu_ext.size() > 0)
        for (size_t i = 0; i < gmu.size(); ++i) gmu.v[i] += gmu_ext.v[i];
      if (glv_ext.size() > 0)
        for (size_t i = 0; i < glv.size(); ++i) glv.v[i] += glv_ext.v[i];
      Tensor4<S> g1 = bott_mu_->backward(gmu);
      Tensor4<S> g2 = bott_lv_->backward(glv);
      for (size_t i = 0; i < g1.size(); ++i) g1.v[i] += g2.v[i];
      g = std::move(g1);
    } else {
      g = bott_->backward(g);
    }

    for (int i = N; i >= 1; --i) {
      if (cfg_.skips && skip_grads[i].size() > 0)
        for (size_t k = 0; k < g.size(); ++k) g.v[k] += skip_grads[i].v[k];
      auto [bn, bc, bh, bw] = pool_in_shapes_[i - 1];
      Tensor4<S> like(bn, bc, bh, bw);
      g = nn::maxpool2_backward(like, pool_argmax_[i - 1], g);
      g = enc_[i - 1]->backward(g);
    }
    return g;
  }

 private:
  ModelConfig cfg_;
  std::vector<std::unique_ptr<nn::ConvBlock<S>>> enc_;
  std::unique_ptr<nn::Conv2dLayer<S>> bott_;
  std::unique_ptr<nn::Conv2dLayer<S>> bott_mu_, bott_lv_;
  std::vector<std::unique_ptr<nn::ConvTranspose2x2Layer<S>>> up_;
  std::vector<std::unique_ptr<nn::ConvBlock<S>>> dec_;
  std::vector<int> dec_out_ch_;
  std::unique_ptr<nn::Conv2dLayer<S>> out_conv_;

  // forward caches
  bool train_ = false;
  std::vector<Tensor4<S>> skips_out_;
  std::vector<std::vector<int>> pool_argmax_;
  std::vector<std::array<int, 4>> pool_in_shapes_;
  std::map<int, int> concat_prev_ch_;
  nn::LatentStats<S> latent_;
  Tensor4<S> eps_;
};

template <typename S>
Model<S> build_model(const ModelConfig& cfg, uint64_t init_seed) {
  return Model<S>(cfg, init_seed);
}

// Chunk matrices are frames x bins (time major); model tensors are NCHW with
// height = frequency and width = time.
template <typename S>
Tensor4<S> chunk_to_tensor(const RealMatrix& chunk) {
  Tensor4<S> t(1, 1, chunk.cols, chunk.rows);
  for (int r = 0; r < chunk.rows; ++r)
    for (int c = 0; c < chunk.cols; ++c) t.at(0, 0, c, r) = static_cast<S>(chunk.at(r, c));
  return t;
}

template <typename S>
RealMatrix tensor_to_chunk(const Tensor4<S>& t) {
  SPECDEN_CHECK(t.n == 1 && t.c == 1, "tensor_to_chunk: expected (1,1,H,W)");
  RealMatrix m(t.w, t.h);
  for (int r = 0; r < t.w; ++r)
    for (int c = 0; c < t.h; ++c) m.at(r, c) = static_cast<double>(t.at(0, 0, c, r));
  return m;
}

// Eval-mode end-to-end spectrum mapping on one chunk.
template <typename S>
RealMatrix enhance_chunk(Model<S>& m, const RealMatrix& noisy_chunk) {
  SPECDEN_CHECK(noisy_chunk.rows == m.config().input_width &&
                    noisy_chunk.cols == m.config().input_height,
                "enhance_chunk: wrong chunk dims");
  Tensor4<S> x = chunk_to_tensor<S>(noisy_chunk);
  auto res = m.forward(x, /*train=*/false);
  return tensor_to_chunk(res.y);
}

}  // namespace specden

#endif  // SPECDEN_MODEL_HPP_
