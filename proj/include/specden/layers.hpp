// specden/layers.hpp
//
// Stateful layer wrappers over the functional kernels in nn_ops.hpp. Each
// layer owns its named parameters and gradient buffers, caches what its
// backward pass needs, and accumulates parameter gradients.
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

#ifndef SPECDEN_LAYERS_HPP_
#define SPECDEN_LAYERS_HPP_

#include <memory>
#include <string>
#include <vector>

#include "specden/nn_ops.hpp"

namespace specden {
namespace nn {

template <typename S>
struct Param {
  std::string name;
  Tensor4<S> value;
  Tensor4<S> grad;
  bool trainable = true;

  void zero_grad() { grad.fill(S(0)); }
};

// Kaiming-uniform fan-in init with the leaky-ReLU gain for slope 0.25.
template <typename S>
void kaiming_uniform_(Tensor4<S>& w, int fan_in, std::mt19937_64& rng) {
  const double gain = std::sqrt(2.0 / (1.0 + 0.25 * 0.25));
  const double bound = gain * std::sqrt(3.0 / fan_in);
  std::uniform_real_distribution<double> d(-bound, bound);
  for (auto& v : w.v) v = static_cast<S>(d(rng));
}

template <typename S>
void bias_uniform_(Tensor4<S>& b, int fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> d(-bound, bound);
  for (auto& v : b.v) v = static_cast<S>(d(rng));
}

template <typename S>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::vector<Param<S>*> params() = 0;
};

template <typename S>
class Conv2dLayer : public Layer<S> {
 public:
  Conv2dLayer(const std::string& name, const ConvSpec& spec, std::mt19937_64& rng)
      : spec_(spec) {
    spec_.validate();
    const int fan_in = spec.in_channels * spec.kh * spec.kw;
    w_.name = name + ".weight";
    w_.value = Tensor4<S>(spec.out_channels, spec.in_channels, spec.kh, spec.kw);
    w_.grad = w_.value;
    kaiming_uniform_(w_.value, fan_in, rng);
    b_.name = name + ".bias";
    b_.value = Tensor4<S>(1, spec.out_channels, 1, 1);
    b_.grad = b_.value;
    bias_uniform_(b_.value, fan_in, rng);
  }

  Tensor4<S> forward(const Tensor4<S>& x) {
    x_ = x;
    return conv2d(x, spec_, w_.value, b_.value);
  }

  Tensor4<S> backward(const Tensor4<S>& gy) {
    ConvGrads<S> g = conv2d_backward(x_, spec_, w_.value, gy);
    for (size_t i = 0; i < g.gw.size(); ++i) w_.grad.v[i] += g.gw.v[i];
    for (size_t i = 0; i < g.gb.size(); ++i) b_.grad.v[i] += g.gb.v[i];
    return std::move(g.gx);
  }

  std::vector<Param<S>*> params() override { return {&w_, &b_}; }
  const ConvSpec& spec() const { return spec_; }
  Param<S>& weight() { return w_; }
  Param<S>& bias() { return b_; }

 private:
  ConvSpec spec_;
  Param<S> w_, b_;
  Tensor4<S> x_;
};

// Depthwise spatial stage + 1x1 pointwise stage.
template <typename S>
class SeparableConv2dLayer : public Layer<S> {
 public:
  SeparableConv2dLayer(const std::string& name, int in_ch, int out_ch, int k, int dh, int dw,
                       std::mt19937_64& rng)
      : in_ch_(in_ch), k_(k), dh_(dh), dw_(dw) {
    dw_w_.name = name + ".dw_weight";
    dw_w_.value = Tensor4<S>(in_ch, 1, k, k);
    dw_w_.grad = dw_w_.value;
    kaiming_uniform_(dw_w_.value, k * k, rng);
    dw_b_.name = name + ".dw_bias";
    dw_b_.value = Tensor4<S>(1, in_ch, 1, 1);
    dw_b_.grad = dw_b_.value;
    bias_uniform_(dw_b_.value, k * k, rng);

    pw_spec_.in_channels = in_ch;
    pw_spec_.out_channels = out_ch;
    pw_spec_.kh = pw_spec_.kw = 1;
    pw_w_.name = name + ".pw_weight";
    pw_w_.value = Tensor4<S>(out_ch, in_ch, 1, 1);
    pw_w_.grad = pw_w_.value;
    kaiming_uniform_(pw_w_.value, in_ch, rng);
    pw_b_.name = name + ".pw_bias";
    pw_b_.value = Tensor4<S>(1, out_ch, 1, 1);
    pw_b_.grad = pw_b_.value;
    bias_uniform_(pw_b_.value, in_ch, rng);
  }

  Tensor4<S> forward(const Tensor4<S>& x) {
    x_ = x;
    mid_ = depthwise_conv2d(x, k_, k_, dh_, dw_, dw_w_.value, dw_b_.value);
    return conv2d(mid_, pw_spec_, pw_w_.value, pw_b_.value);
  }

  Tensor4<S> backward(const Tensor4<S>& gy) {
    ConvGrads<S> gp = conv2d_backward(mid_, pw_spec_, pw_w_.value, gy);
    for (size_t i = 0; i < gp.gw.size(); ++i) pw_w_.grad.v[i] += gp.gw.v[i];
    for (size_t i = 0; i < gp.gb.size(); ++i) pw_b_.grad.v[i] += gp.gb.v[i];
    ConvGrads<S> gd = depthwise_conv2d_backward(x_, k_, k_, dh_, dw_, dw_w_.value, gp.gx);
    for (size_t i = 0; i < gd.gw.size(); ++i) dw_w_.grad.v[i] += gd.gw.v[i];
    for (size_t i = 0; i < gd.gb.size(); ++i) dw_b_.grad.v[i] += gd.gb.v[i];
    return std::move(gd.gx);
  }

  std::vector<Param<S>*> params() override { return {&dw_w_, &dw_b_, &pw_w_, &pw_b_}; }

 private:
  int in_ch_, k_, dh_, dw_;
  ConvSpec pw_spec_;
  Param<S> dw_w_, dw_b_, pw_w_, pw_b_;
  Tensor4<S> x_, mid_;
};

template <typename S>
class ConvTranspose2x2Layer : public Layer<S> {
 public:
  ConvTranspose2x2Layer(const std::string& name, int in_ch, int out_ch, std::mt19937_64& rng) {
    w_.name = name + ".weight";
    w_.value = Tensor4<S>(in_ch, out_ch, 2, 2);
    w_.grad = w_.value;
    kaiming_uniform_(w_.value, in_ch * 4, rng);
    b_.name = name + ".bias";
    b_.value = Tensor4<S>(1, out_ch, 1, 1);
    b_.grad = b_.value;
    bias_uniform_(b_.value, in_ch * 4, rng);
  }

  Tensor4<S> forward(const Tensor4<S>& x) {
    x_ = x;
    return conv2d_transposed(x, w_.value, b_.value);
  }

  Tensor4<S> backward(const Tensor4<S>& gy) {
    ConvGrads<S> g = conv2d_transposed_backward(x_, w_.value, gy);
    for (size_t i = 0; i < g.gw.size(); ++i) w_.grad.v[i] += g.gw.v[i];
    for (size_t i = 0; i < g.gb.size(); ++i) b_.grad.v[i] += g.gb.v[i];
    return std::move(g.gx);
  }

  std::vector<Param<S>*> params() override { return {&w_, &b_}; }

 private:
  Param<S> w_, b_;
  Tensor4<S> x_;
};

template <typename S>
class BatchNorm2dLayer : public Layer<S> {
 public:
  BatchNorm2dLayer(const std::string& name, int channels) {
    gamma_.name = name + ".gamma";
    gamma_.value = Tensor4<S>(1, channels, 1, 1);
    gamma_.value.fill(S(1));
    gamma_.grad = Tensor4<S>(1, channels, 1, 1);
    beta_.name = name + ".beta";
    beta_.value = Tensor4<S>(1, channels, 1, 1);
    beta_.grad = beta_.value;
    rmean_.name = name + ".running_mean";
    rmean_.value = Tensor4<S>(1, channels, 1, 1);
    rmean_.grad = Tensor4<S>();
    rmean_.trainable = false;
    rvar_.name = name + ".running_var";
    rvar_.value = Tensor4<S>(1, channels, 1, 1);
    rvar_.value.fill(S(1));
    rvar_.grad = Tensor4<S>();
    rvar_.trainable = false;
  }

  Tensor4<S> forward(const Tensor4<S>& x, bool train) {
    train_ = train;
    if (train)
      return batchnorm2d(x, gamma_.value, beta_.value, rmean_.value, rvar_.value, true,
                         S(0.1), S(1e-5), &cache_);
    return batchnorm2d(x, gamma_.value, beta_.value, rmean_.value, rvar_.value, false);
  }

  Tensor4<S> backward(const Tensor4<S>& gy) {
    SPECDEN_CHECK(train_, "batchnorm backward requires a train-mode forward");
    BatchNormGrads<S> g = batchnorm2d_backward(gy, gamma_.value, cache_);
    for (size_t i = 0; i < g.ggamma.size(); ++i) gamma_.grad.v[i] += g.ggamma.v[i];
    for (size_t i = 0; i < g.gbeta.size(); ++i) beta_.grad.v[i] += g.gbeta.v[i];
    return std::move(g.gx);
  }

  std::vector<Param<S>*> params() override { return {&gamma_, &beta_, &rmean_, &rvar_}; }

 private:
  Param<S> gamma_, beta_, rmean_, rvar_;
  BatchNormCache<S> cache_;
  bool train_ = false;
};

template <typename S>
class PReLULayer : public Layer<S> {
 public:
  PReLULayer(const std::string& name, int channels) {
    a_.name = name + ".a";
    a_.value = Tensor4<S>(1, channels, 1, 1);
    a_.value.fill(S(0.25));
    a_.grad = Tensor4<S>(1, channels, 1, 1);
  }

  Tensor4<S> forward(const Tensor4<S>& x) {
    x_ = x;
    return prelu(x, a_.value);
  }

  Tensor4<S> backward(const Tensor4<S>& gy) {
    PreluGrads<S> g = prelu_backward(x_, a_.value, gy);
    for (size_t i = 0; i < g.ga.size(); ++i) a_.grad.v[i] += g.ga.v[i];
    return std::move(g.gx);
  }

  std::vector<Param<S>*> params() override { return {&a_}; }

 private:
  Param<S> a_;
  Tensor4<S> x_;
};

// One conv -> BN -> PReLU unit; the conv is dense or depthwise separable.
template <typename S>
class ConvUnit : public Layer<S> {
 public:
  ConvUnit(const std::string& name, int in_ch, int out_ch, bool separable, int dh, int dw,
           std::mt19937_64& rng) {
    if (separable) {
      sep_ = std::make_unique<SeparableConv2dLayer<S>>(name + ".conv", in_ch, out_ch, 3, dh,
                                                       dw, rng);
    } else {
      ConvSpec sp;
      sp.in_channels = in_ch;
      sp.out_channels = out_ch;
      sp.kh = sp.kw = 3;
      sp.dh = dh;
      sp.dw = dw;
      conv_ = std::make_unique<Conv2dLayer<S>>(name + ".conv", sp, rng);
    }
    bn_ = std::make_unique<BatchNorm2dLayer<S>>(name + ".bn", out_ch);
    act_ = std::make_unique<PReLULayer<S>>(name + ".prelu", out_ch);
  }

  Tensor4<S> forward(const Tensor4<S>& x, bool train) {
    Tensor4<S> y = sep_ ? sep_->forward(x) : conv_->forward(x);
    y = bn_->forward(y, train);
    return act_->forward(y);
  }

  Tensor4<S> backward(const Tensor4<S>& gy) {
    Tensor4<S> g = act_->backward(gy);
    g = bn_->backward(g);
    return sep_ ? sep_->backward(g) : conv_->backward(g);
  }

  std::vector<Param<S>*> params() override {
    std::vector<Param<S>*> out = sep_ ? sep_->params() : conv_->params();
    for (auto* p : bn_->params()) out.push_back(p);
    for (auto* p : act_->params()) out.push_back(p);
    return out;
  }

 private:
  std::unique_ptr<Conv2dLayer<S>> conv_;
  std::unique_ptr<SeparableConv2dLayer<S>> sep_;
  std::unique_ptr<BatchNorm2dLayer<S>> bn_;
  std::unique_ptr<PReLULayer<S>> act_;
};

// Encoder/decoder block: two 3x3 conv units, or a single dilated one when
// dilation is enabled.
template <typename S>
class ConvBlock : public Layer<S> {
 public:
  ConvBlock(const std::string& name, int in_ch, int out_ch, bool separable, bool dilated,
            int dh, int dw, std::mt19937_64& rng) {
    if (dilated) {
      units_.push_back(
          std::make_unique<ConvUnit<S>>(name + "1", in_ch, out_ch, separable, dh, dw, rng));
    } else {
      units_.push_back(
          std::make_unique<ConvUnit<S>>(name + "1", in_ch, out_ch, separable, 1, 1, rng));
      units_.push_back(
          std::make_unique<ConvUnit<S>>(name + "2", out_ch, out_ch, separable, 1, 1, rng));
    }
  }

  Tensor4<S> forward(const Tensor4<S>& x, bool train) {
    Tensor4<S> cur = x;
    for (auto& u : units_) cur = u->forward(cur, train);
    return cur;
  }

  Tensor4<S> backward(const Tensor4<S>& gy) {
    Tensor4<S> g = gy;
    for (auto it = units_.rbegin(); it != units_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  std::vector<Param<S>*> params() override {
    std::vector<Param<S>*> out;
    for (auto& u : units_)
      for (auto* p : u->params()) out.push_back(p);
    return out;
  }

 private:
  std::vector<std::unique_ptr<ConvUnit<S>>> units_;
};

}  // namespace nn
}  // namespace specden

#endif  // SPECDEN_LAYERS_HPP_
