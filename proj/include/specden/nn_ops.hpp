// specden/nn_ops.hpp
//
// Functional forward/backward kernels for the layer set used by the models:
// 2-D convolution (with dilation), depthwise separable convolution,
// 2x2/stride-2 transposed convolution, 2x2 max pooling, batch normalization,
// parametric ReLU, channel concatenation, the reparameterization trick, the
// standard-normal KL divergence and mean squared error.
//
// Dense convolutions go through im2col + GEMM (Eigen); everything else is
// direct loops. Reductions use a fixed order so repeated runs are
// bit-identical.
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

#ifndef SPECDEN_NN_OPS_HPP_
#define SPECDEN_NN_OPS_HPP_

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "specden/tensor.hpp"

namespace specden {
namespace nn {

enum class Padding { kSame, kValid };

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kh = 3, kw = 3;
  int dh = 1, dw = 1;  // dilation
  int sh = 1, sw = 1;  // stride
  Padding padding = Padding::kSame;

  int eff_kh() const { return kh + (kh - 1) * (dh - 1); }
  int eff_kw() const { return kw + (kw - 1) * (dw - 1); }

  void validate() const {
    SPECDEN_CHECK(in_channels >= 1 && out_channels >= 1, "ConvSpec: channels >= 1");
    SPECDEN_CHECK(kh >= 1 && kw >= 1 && dh >= 1 && dw >= 1 && sh >= 1 && sw >= 1,
                  "ConvSpec: kernel/dilation/stride >= 1");
    if (padding == Padding::kSame)
      SPECDEN_CHECK(kh % 2 == 1 && kw % 2 == 1, "same padding requires odd kernels");
  }

  int out_h(int in_h) const {
    if (padding == Padding::kSame) return (in_h + sh - 1) / sh;
    return (in_h - eff_kh()) / sh + 1;
  }
  int out_w(int in_w) const {
    if (padding == Padding::kSame) return (in_w + sw - 1) / sw;
    return (in_w - eff_kw()) / sw + 1;
  }
  int pad_h() const { return padding == Padding::kSame ? (eff_kh() - 1) / 2 : 0; }
  int pad_w() const { return padding == Padding::kSame ? (eff_kw() - 1) / 2 : 0; }
};

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapRM = Eigen::Map<MatRM<S>>;
template <typename S>
using CMapRM = Eigen::Map<const MatRM<S>>;

namespace detail {

// Unrolls one batch item into a (C_in*kh*kw) x (H_out*W_out) matrix.
template <typename S>
void im2col(const Tensor4<S>& x, int b, const ConvSpec& sp, MatRM<S>& cols) {
  const int ho = sp.out_h(x.h), wo = sp.out_w(x.w);
  const int P = ho * wo;
  cols.resize(sp.in_channels * sp.kh * sp.kw, P);
  const int ph = sp.pad_h(), pw = sp.pad_w();
  int row = 0;
  for (int ci = 0; ci < sp.in_channels; ++ci) {
    for (int ky = 0; ky < sp.kh; ++ky) {
      for (int kx = 0; kx < sp.kw; ++kx, ++row) {
        S* dst = cols.data() + static_cast<size_t>(row) * P;
        const int oy_base = ky * sp.dh - ph;
        const int ox_base = kx * sp.dw - pw;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * sp.sh + oy_base;
          if (iy < 0 || iy >= x.h) {
            std::fill(dst, dst + wo, S(0));
            dst += wo;
            continue;
          }
          const S* src = &x.v[((static_cast<size_t>(b) * x.c + ci) * x.h + iy) * x.w];
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * sp.sw + ox_base;
            *dst++ = (ix < 0 || ix >= x.w) ? S(0) : src[ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds columns back into the input gradient.
template <typename S>
void col2im(const MatRM<S>& cols, int b, const ConvSpec& sp, Tensor4<S>& gx) {
  const int ho = sp.out_h(gx.h), wo = sp.out_w(gx.w);
  const int ph = sp.pad_h(), pw = sp.pad_w();
  int row = 0;
  for (int ci = 0; ci < sp.in_channels; ++ci) {
    for (int ky = 0; ky < sp.kh; ++ky) {
      for (int kx = 0; kx < sp.kw; ++kx, ++row) {
        const S* src = cols.data() + static_cast<size_t>(row) * (ho * wo);
        const int oy_base = ky * sp.dh - ph;
        const int ox_base = kx * sp.dw - pw;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * sp.sh + oy_base;
          if (iy < 0 || iy >= gx.h) {
            src += wo;
            continue;
          }
          S* dst = &gx.v[((static_cast<size_t>(b) * gx.c + ci) * gx.h + iy) * gx.w];
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * sp.sw + ox_base;
            if (ix >= 0 && ix < gx.w) dst[ix] += src[ox];
          }
          src += wo;
        }
      }
    }
  }
}

}  // namespace detail

// Cross-correlation conv2d. weights: (C_out, C_in, kh, kw); bias: (1, C_out, 1, 1).
template <typename S>
Tensor4<S> conv2d(const Tensor4<S>& x, const ConvSpec& sp, const Tensor4<S>& weights,
                  const Tensor4<S>& bias) {
  sp.validate();
  SPECDEN_CHECK(x.c == sp.in_channels, "conv2d: input channel mismatch");
  SPECDEN_CHECK(weights.n == sp.out_channels && weights.c == sp.in_channels &&
                    weights.h == sp.kh && weights.w == sp.kw,
                "conv2d: weight shape mismatch");
  SPECDEN_CHECK(bias.c == sp.out_channels, "conv2d: bias shape mismatch");

  const int ho = sp.out_h(x.h), wo = sp.out_w(x.w);
  SPECDEN_CHECK(ho >= 1 && wo >= 1, "conv2d: kernel larger than input");
  const int K = sp.in_channels * sp.kh * sp.kw;
  const int P = ho * wo;
  Tensor4<S> y(x.n, sp.out_channels, ho, wo);

  CMapRM<S> W(weights.v.data(), sp.out_channels, K);
  MatRM<S> cols;
  for (int b = 0; b < x.n; ++b) {
    detail::im2col(x, b, sp, cols);
    MapRM<S> Y(&y.v[static_cast<size_t>(b) * sp.out_channels * P], sp.out_channels, P);
    Y.noalias() = W * cols;
    for (int co = 0; co < sp.out_channels; ++co)
      Y.row(co).array() += bias.v[co];
  }
  return y;
}

template <typename S>
struct ConvGrads {
  Tensor4<S> gx, gw, gb;
};

template <typename S>
ConvGrads<S> conv2d_backward(const Tensor4<S>& x, const ConvSpec& sp,
                             const Tensor4<S>& weights, const Tensor4<S>& gy) {
  const int ho = sp.out_h(x.h), wo = sp.out_w(x.w);
  SPECDEN_CHECK(gy.n == x.n && gy.c == sp.out_channels && gy.h == ho && gy.w == wo,
                "conv2d_backward: gy shape mismatch");
  const int K = sp.in_channels * sp.kh * sp.kw;
  const int P = ho * wo;

  ConvGrads<S> g;
  g.gx = Tensor4<S>(x.n, x.c, x.h, x.w);
  g.gw = Tensor4<S>(weights.n, weights.c, weights.h, weights.w);
  g.gb = Tensor4<S>(1, sp.out_channels, 1, 1);

  CMapRM<S> W(weights.v.data(), sp.out_channels, K);
  MapRM<S> GW(g.gw.v.data(), sp.out_channels, K);
  MatRM<S> cols, gcols;
  for (int b = 0; b < x.n; ++b) {
    detail::im2col(x, b, sp, cols);
    CMapRM<S> GY(&gy.v[static_cast<size_t>(b) * sp.out_channels * P], sp.out_channels, P);
    GW.noalias() += GY * cols.transpose();
    gcols.noalias() = W.transpose() * GY;
    detail::col2im(gcols, b, sp, g.gx);
    // fixed-order sums keep training bit-reproducible regardless of heap layout
    for (int co = 0; co < sp.out_channels; ++co) {
      S acc = S(0);
      for (int p = 0; p < P; ++p) acc += GY(co, p);
      g.gb.v[co] += acc;
    }
  }
  return g;
}

// Depthwise convolution: one kh x kw filter per channel (groups = channels).
// dw_weights: (C, 1, kh, kw); bias: (1, C, 1, 1). Stride 1, same padding.
template <typename S>
Tensor4<S> depthwise_conv2d(const Tensor4<S>& x, int kh, int kw, int dh, int dw,
                            const Tensor4<S>& weights, const Tensor4<S>& bias) {
  SPECDEN_CHECK(weights.n == x.c && weights.c == 1 && weights.h == kh && weights.w == kw,
                "depthwise_conv2d: weight shape mismatch");
  const int ph = (kh + (kh - 1) * (dh - 1) - 1) / 2;
  const int pw = (kw + (kw - 1) * (dw - 1) - 1) / 2;
  Tensor4<S> y(x.n, x.c, x.h, x.w);
  for (int b = 0; b < x.n; ++b) {
    for (int c = 0; c < x.c; ++c) {
      const S* wp = &weights.v[static_cast<size_t>(c) * kh * kw];
      for (int oy = 0; oy < x.h; ++oy) {
        for (int ox = 0; ox < x.w; ++ox) {
          S acc = bias.v[c];
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy + ky * dh - ph;
            if (iy < 0 || iy >= x.h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox + kx * dw - pw;
              if (ix < 0 || ix >= x.w) continue;
              acc += wp[ky * kw + kx] * x.at(b, c, iy, ix);
            }
          }
          y.at(b, c, oy, ox) = acc;
        }
      }
    }
  }
  return y;
}

template <typename S>
ConvGrads<S> depthwise_conv2d_backward(const Tensor4<S>& x, int kh, int kw, int dh, int dw,
                                       const Tensor4<S>& weights, const Tensor4<S>& gy) {
  SPECDEN_CHECK(gy.same_shape(x), "depthwise_conv2d_backward: gy shape mismatch");
  const int ph = (kh + (kh - 1) * (dh - 1) - 1) / 2;
  const int pw = (kw + (kw - 1) * (dw - 1) - 1) / 2;
  ConvGrads<S> g;
  g.gx = Tensor4<S>(x.n, x.c, x.h, x.w);
  g.gw = Tensor4<S>(weights.n, 1, kh, kw);
  g.gb = Tensor4<S>(1, x.c, 1, 1);
  for (int b = 0; b < x.n; ++b) {
    for (int c = 0; c < x.c; ++c) {
      const S* wp = &weights.v[static_cast<size_t>(c) * kh * kw];
      S* gwp = &g.gw.v[static_cast<size_t>(c) * kh * kw];
      for (int oy = 0; oy < x.h; ++oy) {
        for (int ox = 0; ox < x.w; ++ox) {
          const S go = gy.at(b, c, oy, ox);
          g.gb.v[c] += go;
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy + ky * dh - ph;
            if (iy < 0 || iy >= x.h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox + kx * dw - pw;
              if (ix < 0 || ix >= x.w) continue;
              g.gx.at(b, c, iy, ix) += go * wp[ky * kw + kx];
              gwp[ky * kw + kx] += go * x.at(b, c, iy, ix);
            }
          }
        }
      }
    }
  }
  return g;
}

// Depthwise separable convolution: depthwise spatial stage followed by a
// 1x1 pointwise stage. pw_weights: (C_out, C_in, 1, 1).
template <typename S>
Tensor4<S> depthwise_separable_conv(const Tensor4<S>& x, int kh, int kw, int dh, int dw,
                                    const Tensor4<S>& dw_weights, const Tensor4<S>& dw_bias,
                                    const Tensor4<S>& pw_weights, const Tensor4<S>& pw_bias) {
  Tensor4<S> mid = depthwise_conv2d(x, kh, kw, dh, dw, dw_weights, dw_bias);
  ConvSpec pw;
  pw.in_channels = x.c;
  pw.out_channels = pw_weights.n;
  pw.kh = pw.kw = 1;
  return conv2d(mid, pw, pw_weights, pw_bias);
}

// Transposed convolution, 2x2 kernel, stride 2, no padding: exact 2x
// upsampling; the linear adjoint of a stride-2 valid conv2d.
// weights: (C_in, C_out, 2, 2); bias: (1, C_out, 1, 1).
template <typename S>
Tensor4<S> conv2d_transposed(const Tensor4<S>& x, const Tensor4<S>& weights,
                             const Tensor4<S>& bias) {
  const int ci = x.c;
  SPECDEN_CHECK(weights.n == ci && weights.h == 2 && weights.w == 2,
                "conv2d_transposed: weight shape mismatch");
  const int co = weights.c;
  const int P = x.h * x.w;
  Tensor4<S> y(x.n, co, x.h * 2, x.w * 2);

  // W2[(o*4 + t), i] = weights[i, o, t]
  MatRM<S> W2(co * 4, ci);
  for (int i = 0; i < ci; ++i)
    for (int o = 0; o < co; ++o)
      for (int t = 0; t < 4; ++t) W2(o * 4 + t, i) = weights.v[(static_cast<size_t>(i) * co + o) * 4 + t];

  MatRM<S> tmp;
  for (int b = 0; b < x.n; ++b) {
    CMapRM<S> X(&x.v[static_cast<size_t>(b) * ci * P], ci, P);
    tmp.noalias() = W2 * X;
    for (int o = 0; o < co; ++o) {
      for (int iy = 0; iy < x.h; ++iy) {
        for (int ix = 0; ix < x.w; ++ix) {
          const int p = iy * x.w + ix;
          y.at(b, o, 2 * iy, 2 * ix) = tmp(o * 4 + 0, p) + bias.v[o];
          y.at(b, o, 2 * iy, 2 * ix + 1) = tmp(o * 4 + 1, p) + bias.v[o];
          y.at(b, o, 2 * iy + 1, 2 * ix) = tmp(o * 4 + 2, p) + bias.v[o];
          y.at(b, o, 2 * iy + 1, 2 * ix + 1) = tmp(o * 4 + 3, p) + bias.v[o];
        }
      }
    }
  }
  return y;
}

template <typename S>
ConvGrads<S> conv2d_transposed_backward(const Tensor4<S>& x, const Tensor4<S>& weights,
                                        const Tensor4<S>& gy) {
  const int ci = x.c, co = weights.c;
  SPECDEN_CHECK(gy.n == x.n && gy.c == co && gy.h == 2 * x.h && gy.w == 2 * x.w,
                "conv2d_transposed_backward: gy shape mismatch");
  const int P = x.h * x.w;

  MatRM<S> W2(co * 4, ci);
  for (int i = 0; i < ci; ++i)
    for (int o = 0; o < co; ++o)
      for (int t = 0; t < 4; ++t) W2(o * 4 + t, i) = weights.v[(static_cast<size_t>(i) * co + o) * 4 + t];

  ConvGrads<S> g;
  g.gx = Tensor4<S>(x.n, ci, x.h, x.w);
  g.gw = Tensor4<S>(ci, co, 2, 2);
  g.gb = Tensor4<S>(1, co, 1, 1);

  MatRM<S> GT(co * 4, P), GW2(co * 4, ci);
  GW2.setZero();
  MatRM<S> gxm;
  for (int b = 0; b < x.n; ++b) {
    for (int o = 0; o < co; ++o) {
      for (int iy = 0; iy < x.h; ++iy) {
        for (int ix = 0; ix < x.w; ++ix) {
          const int p = iy * x.w + ix;
          GT(o * 4 + 0, p) = gy.at(b, o, 2 * iy, 2 * ix);
          GT(o * 4 + 1, p) = gy.at(b, o, 2 * iy, 2 * ix + 1);
          GT(o * 4 + 2, p) = gy.at(b, o, 2 * iy + 1, 2 * ix);
          GT(o * 4 + 3, p) = gy.at(b, o, 2 * iy + 1, 2 * ix + 1);
        }
      }
      for (int t = 0; t < 4; ++t) {
        S acc = S(0);
        for (int p = 0; p < P; ++p) acc += GT(o * 4 + t, p);
        g.gb.v[o] += acc;
      }
    }
    CMapRM<S> X(&x.v[static_cast<size_t>(b) * ci * P], ci, P);
    GW2.noalias() += GT * X.transpose();
    MapRM<S> GX(&g.gx.v[static_cast<size_t>(b) * ci * P], ci, P);
    GX.noalias() += W2.transpose() * GT;
  }
  for (int i = 0; i < ci; ++i)
    for (int o = 0; o < co; ++o)
      for (int t = 0; t < 4; ++t) g.gw.v[(static_cast<size_t>(i) * co + o) * 4 + t] = GW2(o * 4 + t, i);
  return g;
}

// 2x2 max pooling, stride 2. Gradient routes to the argmax; ties break to the
// first element in row-major window order.
template <typename S>
Tensor4<S> maxpool2(const Tensor4<S>& x, std::vector<int>* argmax = nullptr) {
  SPECDEN_CHECK(x.h % 2 == 0 && x.w % 2 == 0, "maxpool2: odd spatial dims");
  Tensor4<S> y(x.n, x.c, x.h / 2, x.w / 2);
  if (argmax) argmax->assign(y.size(), 0);
  size_t oi = 0;
  for (int b = 0; b < x.n; ++b) {
    for (int c = 0; c < x.c; ++c) {
      for (int oy = 0; oy < y.h; ++oy) {
        for (int ox = 0; ox < y.w; ++ox, ++oi) {
          int best_dy = 0, best_dx = 0;
          S best = x.at(b, c, 2 * oy, 2 * ox);
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              S v = x.at(b, c, 2 * oy + dy, 2 * ox + dx);
              if (v > best) {
                best = v;
                best_dy = dy;
                best_dx = dx;
              }
            }
          }
          y.v[oi] = best;
          if (argmax)
            (*argmax)[oi] = static_cast<int>(
                (((static_cast<size_t>(b) * x.c + c) * x.h + 2 * oy + best_dy) * x.w +
                 2 * ox + best_dx));
        }
      }
    }
  }
  return y;
}

template <typename S>
Tensor4<S> maxpool2_backward(const Tensor4<S>& x_shape_like, const std::vector<int>& argmax,
                             const Tensor4<S>& gy) {
  Tensor4<S> gx(x_shape_like.n, x_shape_like.c, x_shape_like.h, x_shape_like.w);
  for (size_t i = 0; i < gy.size(); ++i) gx.v[static_cast<size_t>(argmax[i])] += gy.v[i];
  return gx;
}

// ---- batch normalization ----

template <typename S>
struct BatchNormCache {
  Tensor4<S> xhat;
  std::vector<S> invstd;  // per channel
};

// gamma/beta/running_*: (1, C, 1, 1). Train mode normalizes by batch
// statistics over (N, H, W) and updates running stats (unbiased variance,
// PyTorch convention); eval mode uses the running stats.
template <typename S>
Tensor4<S> batchnorm2d(const Tensor4<S>& x, const Tensor4<S>& gamma, const Tensor4<S>& beta,
                       Tensor4<S>& running_mean, Tensor4<S>& running_var, bool train,
                       S momentum = S(0.1), S eps = S(1e-5),
                       BatchNormCache<S>* cache = nullptr) {
  const int C = x.c;
  const long m = static_cast<long>(x.n) * x.h * x.w;
  Tensor4<S> y(x.n, x.c, x.h, x.w);
  if (train) {
    SPECDEN_CHECK(m >= 2, "batchnorm2d: need batch*height*width >= 2 in train mode");
    if (cache) {
      cache->xhat = Tensor4<S>(x.n, x.c, x.h, x.w);
      cache->invstd.assign(C, S(0));
    }
    for (int c = 0; c < C; ++c) {
      double mean = 0.0;
      for (int b = 0; b < x.n; ++b)
        for (int yy = 0; yy < x.h; ++yy)
          for (int xx = 0; xx < x.w; ++xx) mean += x.at(b, c, yy, xx);
      mean /= m;
      double var = 0.0;
      for (int b = 0; b < x.n; ++b)
        for (int yy = 0; yy < x.h; ++yy)
          for (int xx = 0; xx < x.w; ++xx) {
            double d = x.at(b, c, yy, xx) - mean;
            var += d * d;
          }
      var /= m;
      const double invstd = 1.0 / std::sqrt(var + static_cast<double>(eps));
      running_mean.v[c] = (S(1) - momentum) * running_mean.v[c] + momentum * static_cast<S>(mean);
      running_var.v[c] = (S(1) - momentum) * running_var.v[c] +
                         momentum * static_cast<S>(var * m / std::max<long>(m - 1, 1));
      if (cache) cache->invstd[c] = static_cast<S>(invstd);
      for (int b = 0; b < x.n; ++b)
        for (int yy = 0; yy < x.h; ++yy)
          for (int xx = 0; xx < x.w; ++xx) {
            S xh = static_cast<S>((x.at(b, c, yy, xx) - mean) * invstd);
            if (cache) cache->xhat.at(b, c, yy, xx) = xh;
            y.at(b, c, yy, xx) = gamma.v[c] * xh + beta.v[c];
          }
    }
  } else {
    for (int c = 0; c < C; ++c) {
      const S invstd = S(1) / std::sqrt(running_var.v[c] + eps);
      for (int b = 0; b < x.n; ++b)
        for (int yy = 0; yy < x.h; ++yy)
          for (int xx = 0; xx < x.w; ++xx)
            y.at(b, c, yy, xx) =
                gamma.v[c] * (x.at(b, c, yy, xx) - running_mean.v[c]) * invstd + beta.v[c];
    }
  }
  return y;
}

template <typename S>
struct BatchNormGrads {
  Tensor4<S> gx, ggamma, gbeta;
};

template <typename S>
BatchNormGrads<S> batchnorm2d_backward(const Tensor4<S>& gy, const Tensor4<S>& gamma,
                                       const BatchNormCache<S>& cache) {
  const int C = gy.c;
  const long m = static_cast<long>(gy.n) * gy.h * gy.w;
  BatchNormGrads<S> g;
  g.gx = Tensor4<S>(gy.n, gy.c, gy.h, gy.w);
  g.ggamma = Tensor4<S>(1, C, 1, 1);
  g.gbeta = Tensor4<S>(1, C, 1, 1);
  for (int c = 0; c < C; ++c) {
    double sum_gy = 0.0, sum_gy_xhat = 0.0;
    for (int b = 0; b < gy.n; ++b)
      for (int yy = 0; yy < gy.h; ++yy)
        for (int xx = 0; xx < gy.w; ++xx) {
          double go = gy.at(b, c, yy, xx);
          sum_gy += go;
          sum_gy_xhat += go * cache.xhat.at(b, c, yy, xx);
        }
    g.gbeta.v[c] = static_cast<S>(sum_gy);
    g.ggamma.v[c] = static_cast<S>(sum_gy_xhat);
    const double k = static_cast<double>(gamma.v[c]) * cache.invstd[c] / m;
    for (int b = 0; b < gy.n; ++b)
      for (int yy = 0; yy < gy.h; ++yy)
        for (int xx = 0; xx < gy.w; ++xx) {
          double go = gy.at(b, c, yy, xx);
          double xh = cache.xhat.at(b, c, yy, xx);
          g.gx.at(b, c, yy, xx) = static_cast<S>(k * (m * go - sum_gy - xh * sum_gy_xhat));
        }
  }
  return g;
}

// ---- parametric ReLU, per-channel slope ----

template <typename S>
Tensor4<S> prelu(const Tensor4<S>& x, const Tensor4<S>& a) {
  SPECDEN_CHECK(a.c == x.c, "prelu: slope shape mismatch");
  Tensor4<S> y(x.n, x.c, x.h, x.w);
  for (int b = 0; b < x.n; ++b)
    for (int c = 0; c < x.c; ++c)
      for (int yy = 0; yy < x.h; ++yy)
        for (int xx = 0; xx < x.w; ++xx) {
          S v = x.at(b, c, yy, xx);
          y.at(b, c, yy, xx) = v >= S(0) ? v : a.v[c] * v;
        }
  return y;
}

template <typename S>
struct PreluGrads {
  Tensor4<S> gx, ga;
};

template <typename S>
PreluGrads<S> prelu_backward(const Tensor4<S>& x, const Tensor4<S>& a, const Tensor4<S>& gy) {
  PreluGrads<S> g;
  g.gx = Tensor4<S>(x.n, x.c, x.h, x.w);
  g.ga = Tensor4<S>(1, x.c, 1, 1);
  for (int b = 0; b < x.n; ++b)
    for (int c = 0; c < x.c; ++c)
      for (int yy = 0; yy < x.h; ++yy)
        for (int xx = 0; xx < x.w; ++xx) {
          S v = x.at(b, c, yy, xx);
          S go = gy.at(b, c, yy, xx);
          if (v >= S(0)) {
            g.gx.at(b, c, yy, xx) = go;
          } else {
            g.gx.at(b, c, yy, xx) = go * a.v[c];
            g.ga.v[c] += go * v;
          }
        }
  return g;
}

// ---- channel concatenation ----

template <typename S>
Tensor4<S> concat_channels(const Tensor4<S>& a, const Tensor4<S>& b) {
  SPECDEN_CHECK(a.n == b.n && a.h == b.h && a.w == b.w,
                "concat_channels: batch/spatial mismatch");
  Tensor4<S> y(a.n, a.c + b.c, a.h, a.w);
  const size_t plane = static_cast<size_t>(a.h) * a.w;
  for (int bb = 0; bb < a.n; ++bb) {
    std::copy(&a.v[static_cast<size_t>(bb) * a.c * plane],
              &a.v[static_cast<size_t>(bb) * a.c * plane] + a.c * plane,
              &y.v[static_cast<size_t>(bb) * y.c * plane]);
    std::copy(&b.v[static_cast<size_t>(bb) * b.c * plane],
              &b.v[static_cast<size_t>(bb) * b.c * plane] + b.c * plane,
              &y.v[static_cast<size_t>(bb) * y.c * plane + a.c * plane]);
  }
  return y;
}

template <typename S>
void split_channels(const Tensor4<S>& y, int ca, Tensor4<S>& ga, Tensor4<S>& gb) {
  ga = Tensor4<S>(y.n, ca, y.h, y.w);
  gb = Tensor4<S>(y.n, y.c - ca, y.h, y.w);
  const size_t plane = static_cast<size_t>(y.h) * y.w;
  for (int bb = 0; bb < y.n; ++bb) {
    std::copy(&y.v[static_cast<size_t>(bb) * y.c * plane],
              &y.v[static_cast<size_t>(bb) * y.c * plane] + ca * plane,
              &ga.v[static_cast<size_t>(bb) * ca * plane]);
    std::copy(&y.v[static_cast<size_t>(bb) * y.c * plane + ca * plane],
              &y.v[static_cast<size_t>(bb) * y.c * plane] + y.c * plane,
              &gb.v[static_cast<size_t>(bb) * gb.c * plane]);
  }
}

// ---- variational bottleneck pieces ----

template <typename S>
struct LatentStats {
  Tensor4<S> mu;
  Tensor4<S> log_var;  // clamped to [-20, 20]
};

template <typename S>
S clamp_log_var(S lv) {
  return std::clamp(lv, S(-20), S(20));
}

// z = mu + exp(0.5 * log_var) * eps, eps ~ N(0, I) from the given seed.
// The noise draw is cached so gradients flow to mu and log_var only.
template <typename S>
Tensor4<S> reparameterize(const LatentStats<S>& stats, uint64_t rng_seed,
                          Tensor4<S>* eps_out = nullptr) {
  SPECDEN_CHECK(stats.mu.same_shape(stats.log_var), "reparameterize: shape mismatch");
  Tensor4<S> z(stats.mu.n, stats.mu.c, stats.mu.h, stats.mu.w);
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  if (eps_out) *eps_out = Tensor4<S>(z.n, z.c, z.h, z.w);
  for (size_t i = 0; i < z.size(); ++i) {
    S eps = static_cast<S>(dist(rng));
    if (eps_out) eps_out->v[i] = eps;
    z.v[i] = stats.mu.v[i] + std::exp(S(0.5) * clamp_log_var(stats.log_var.v[i])) * eps;
  }
  return z;
}

template <typename S>
void reparameterize_backward(const LatentStats<S>& stats, const Tensor4<S>& eps,
                             const Tensor4<S>& gz, Tensor4<S>& gmu, Tensor4<S>& glog_var) {
  gmu = Tensor4<S>(gz.n, gz.c, gz.h, gz.w);
  glog_var = Tensor4<S>(gz.n, gz.c, gz.h, gz.w);
  for (size_t i = 0; i < gz.size(); ++i) {
    gmu.v[i] = gz.v[i];
    S lv = stats.log_var.v[i];
    S inside = (lv > S(-20) && lv < S(20)) ? S(1) : S(0);
    glog_var.v[i] = gz.v[i] * eps.v[i] * S(0.5) * std::exp(S(0.5) * clamp_log_var(lv)) * inside;
  }
}

// D_KL(N(mu, sigma^2) || N(0, I)) summed over latent elements, averaged over
// the batch: 1/2 * sum(mu^2 + sigma^2 - log sigma^2 - 1) / N.
template <typename S>
double kl_standard_normal(const LatentStats<S>& stats) {
  SPECDEN_CHECK(stats.mu.same_shape(stats.log_var), "kl: shape mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < stats.mu.size(); ++i) {
    double mu = stats.mu.v[i];
    double lv = clamp_log_var(static_cast<double>(stats.log_var.v[i]));
    acc += mu * mu + std::exp(lv) - lv - 1.0;
  }
  return 0.5 * acc / stats.mu.n;
}

template <typename S>
void kl_standard_normal_backward(const LatentStats<S>& stats, double gout, Tensor4<S>& gmu,
                                 Tensor4<S>& glog_var) {
  gmu = Tensor4<S>(stats.mu.n, stats.mu.c, stats.mu.h, stats.mu.w);
  glog_var = Tensor4<S>(stats.mu.n, stats.mu.c, stats.mu.h, stats.mu.w);
  const double scale = gout / stats.mu.n;
  for (size_t i = 0; i < stats.mu.size(); ++i) {
    S lv = stats.log_var.v[i];
    S inside = (lv > S(-20) && lv < S(20)) ? S(1) : S(0);
    gmu.v[i] = static_cast<S>(scale * stats.mu.v[i]);
    glog_var.v[i] = static_cast<S>(
        scale * 0.5 * (std::exp(clamp_log_var(static_cast<double>(lv))) - 1.0) * inside);
  }
}

// Mean of squared elementwise differences over all elements.
template <typename S>
double mse(const Tensor4<S>& pred, const Tensor4<S>& target) {
  SPECDEN_CHECK(pred.same_shape(target), "mse: shape mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    double d = static_cast<double>(pred.v[i]) - static_cast<double>(target.v[i]);
    acc += d * d;
  }
  return acc / pred.size();
}

template <typename S>
Tensor4<S> mse_backward(const Tensor4<S>& pred, const Tensor4<S>& target, double gout = 1.0) {
  Tensor4<S> g(pred.n, pred.c, pred.h, pred.w);
  const double scale = 2.0 * gout / pred.size();
  for (size_t i = 0; i < pred.size(); ++i)
    g.v[i] = static_cast<S>(scale * (static_cast<double>(pred.v[i]) -
                                     static_cast<double>(target.v[i])));
  return g;
}

}  // namespace nn
}  // namespace specden

#endif  // SPECDEN_NN_OPS_HPP_
