#pragma once

#include <algorithm>
#include <cmath>

#include "wsci/tensor.hpp"

namespace wsci {

// All kernels: stride 1, zero same-padding, odd kernels. Spatial extent is
// preserved by every op except crop_border.

template <class T>
void check_conv_shapes(const TensorT<T>& in, const TensorT<T>& w, bool depthwise) {
  if (w.height() != w.width() || w.height() % 2 == 0)
    throw error("shape", "kernel must be square with odd extent, got " +
                             std::to_string(w.height()) + "x" + std::to_string(w.width()));
  if (depthwise) {
    if (w.batch() != in.channels() || w.channels() != 1)
      throw error("shape", "depthwise weight expects one filter per input channel: input has " +
                               std::to_string(in.channels()) + " channels, weight has " +
                               std::to_string(w.batch()) + " filters");
  } else {
    if (w.channels() != in.channels())
      throw error("shape", "conv weight channel axis (" + std::to_string(w.channels()) +
                               ") does not match input channels (" +
                               std::to_string(in.channels()) + ")");
  }
}

// weight: (out_ch, in_ch, k, k); bias: (1, out_ch, 1, 1). Accumulation runs
// per (kernel tap, channel) over contiguous rows, a fixed order that keeps
// repeated runs bit-identical while letting the inner loop vectorize.
template <class T>
TensorT<T> conv2d_forward(const TensorT<T>& in, const TensorT<T>& weight,
                          const TensorT<T>& bias) {
  check_conv_shapes(in, weight, false);
  const int B = in.batch(), C = in.channels(), H = in.height(), W = in.width();
  const int O = weight.batch(), K = weight.height(), P = K / 2;
  TensorT<T> out(B, O, H, W);
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o) {
      T* op = &out.at(b, o, 0, 0);
      const T bv = bias.size() ? bias.data[o] : T(0);
      for (int i = 0; i < H * W; ++i) op[i] = bv;
      for (int c = 0; c < C; ++c) {
        const T* ip = &in.at(b, c, 0, 0);
        for (int ky = 0; ky < K; ++ky)
          for (int kx = 0; kx < K; ++kx) {
            const T w = weight.at(o, c, ky, kx);
            const int dy = ky - P, dx = kx - P;
            const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
            const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
            for (int y = y0; y < y1; ++y) {
              T* orow = op + y * W;
              const T* irow = ip + (y + dy) * W + dx;
              for (int x = x0; x < x1; ++x) orow[x] += w * irow[x];
            }
          }
      }
    }
  return out;
}

template <class T>
void conv2d_backward(const TensorT<T>& in, const TensorT<T>& weight,
                     const TensorT<T>& grad_out, TensorT<T>* grad_in,
                     TensorT<T>* grad_weight, TensorT<T>* grad_bias) {
  const int B = in.batch(), C = in.channels(), H = in.height(), W = in.width();
  const int O = weight.batch(), K = weight.height(), P = K / 2;
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o) {
      const T* gp = &grad_out.at(b, o, 0, 0);
      if (grad_bias) {
        T acc = 0;
        for (int i = 0; i < H * W; ++i) acc += gp[i];
        grad_bias->data[o] += acc;
      }
      for (int c = 0; c < C; ++c) {
        const T* ip = &in.at(b, c, 0, 0);
        T* gip = grad_in ? &grad_in->at(b, c, 0, 0) : nullptr;
        for (int ky = 0; ky < K; ++ky)
          for (int kx = 0; kx < K; ++kx) {
            const int dy = ky - P, dx = kx - P;
            const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
            const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
            const T w = weight.at(o, c, ky, kx);
            T wacc = 0;
            for (int y = y0; y < y1; ++y) {
              const T* grow = gp + y * W;
              const T* irow = ip + (y + dy) * W + dx;
              T* girow = gip ? gip + (y + dy) * W + dx : nullptr;
              for (int x = x0; x < x1; ++x) {
                wacc += grow[x] * irow[x];
                if (girow) girow[x] += grow[x] * w;
              }
            }
            if (grad_weight) grad_weight->at(o, c, ky, kx) += wacc;
          }
      }
    }
}

// weight: (ch, 1, k, k). Channel c of the output depends only on channel c
// of the input.
template <class T>
TensorT<T> depthwise_conv2d_forward(const TensorT<T>& in, const TensorT<T>& weight) {
  check_conv_shapes(in, weight, true);
  const int B = in.batch(), C = in.channels(), H = in.height(), W = in.width();
  const int K = weight.height(), P = K / 2;
  TensorT<T> out(B, C, H, W);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      T* op = &out.at(b, c, 0, 0);
      const T* ip = &in.at(b, c, 0, 0);
      for (int ky = 0; ky < K; ++ky)
        for (int kx = 0; kx < K; ++kx) {
          const T w = weight.at(c, 0, ky, kx);
          const int dy = ky - P, dx = kx - P;
          const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
          const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
          for (int y = y0; y < y1; ++y) {
            T* orow = op + y * W;
            const T* irow = ip + (y + dy) * W + dx;
            for (int x = x0; x < x1; ++x) orow[x] += w * irow[x];
          }
        }
    }
  return out;
}

template <class T>
void depthwise_conv2d_backward(const TensorT<T>& in, const TensorT<T>& weight,
                               const TensorT<T>& grad_out, TensorT<T>* grad_in,
                               TensorT<T>* grad_weight) {
  const int B = in.batch(), C = in.channels(), H = in.height(), W = in.width();
  const int K = weight.height(), P = K / 2;
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T* gp = &grad_out.at(b, c, 0, 0);
      const T* ip = &in.at(b, c, 0, 0);
      T* gip = grad_in ? &grad_in->at(b, c, 0, 0) : nullptr;
      for (int ky = 0; ky < K; ++ky)
        for (int kx = 0; kx < K; ++kx) {
          const int dy = ky - P, dx = kx - P;
          const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
          const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
          const T w = weight.at(c, 0, ky, kx);
          T wacc = 0;
          for (int y = y0; y < y1; ++y) {
            const T* grow = gp + y * W;
            const T* irow = ip + (y + dy) * W + dx;
            T* girow = gip ? gip + (y + dy) * W + dx : nullptr;
            for (int x = x0; x < x1; ++x) {
              wacc += grow[x] * irow[x];
              if (girow) girow[x] += grow[x] * w;
            }
          }
          if (grad_weight) grad_weight->at(c, 0, ky, kx) += wacc;
        }
    }
}

// ---- Batch normalization ------------------------------------------------

template <class T>
struct BatchNormCache {
  TensorT<T> normalized;            // (x - mean) / sqrt(var + eps)
  std::vector<T> inv_std;           // per channel
  std::vector<T> batch_mean;
  const TensorT<T>* input = nullptr;
};

// scale/shift: (1, C, 1, 1). running buffers: length C. Train mode uses batch
// statistics and updates the running buffers in place; eval mode reads them.
template <class T>
TensorT<T> batchnorm2d_forward(const TensorT<T>& in, const TensorT<T>& scale,
                               const TensorT<T>& shift, std::vector<T>& running_mean,
                               std::vector<T>& running_var, bool train_mode,
                               T momentum, T eps, BatchNormCache<T>* cache) {
  const int B = in.batch(), C = in.channels(), H = in.height(), W = in.width();
  if ((int)running_mean.size() != C || (int)running_var.size() != C)
    throw error("shape", "batchnorm buffer length does not match channel count");
  const size_t n = static_cast<size_t>(B) * H * W;
  TensorT<T> out(B, C, H, W);
  std::vector<T> mean(C), inv_std(C);
  for (int c = 0; c < C; ++c) {
    T m, v;
    if (train_mode) {
      T sum = 0;
      for (int b = 0; b < B; ++b)
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) sum += in.at(b, c, y, x);
      m = sum / T(n);
      T sq = 0;
      for (int b = 0; b < B; ++b)
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            const T d = in.at(b, c, y, x) - m;
            sq += d * d;
          }
      v = sq / T(n);  // biased, as used for normalization
      running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * m;
      // running buffer stores the unbiased estimate
      const T unbiased = n > 1 ? sq / T(n - 1) : v;
      running_var[c] = (T(1) - momentum) * running_var[c] + momentum * unbiased;
    } else {
      m = running_mean[c];
      v = running_var[c];
    }
    mean[c] = m;
    inv_std[c] = T(1) / std::sqrt(v + eps);
  }
  if (cache) {
    cache->normalized = TensorT<T>(B, C, H, W);
    cache->inv_std = inv_std;
    cache->batch_mean = mean;
    cache->input = &in;
  }
  for (int c = 0; c < C; ++c) {
    const T g = scale.data[c], bta = shift.data[c];
    for (int b = 0; b < B; ++b)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const T nrm = (in.at(b, c, y, x) - mean[c]) * inv_std[c];
          if (cache) cache->normalized.at(b, c, y, x) = nrm;
          out.at(b, c, y, x) = g * nrm + bta;
        }
  }
  return out;
}

// Train-mode backward (batch statistics participate in the gradient).
template <class T>
void batchnorm2d_backward(const BatchNormCache<T>& cache, const TensorT<T>& scale,
                          const TensorT<T>& grad_out, TensorT<T>* grad_in,
                          TensorT<T>* grad_scale, TensorT<T>* grad_shift) {
  const TensorT<T>& nrm = cache.normalized;
  const int B = nrm.batch(), C = nrm.channels(), H = nrm.height(), W = nrm.width();
  const T n = T(static_cast<size_t>(B) * H * W);
  for (int c = 0; c < C; ++c) {
    T sum_g = 0, sum_gn = 0;
    for (int b = 0; b < B; ++b)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const T g = grad_out.at(b, c, y, x);
          sum_g += g;
          sum_gn += g * nrm.at(b, c, y, x);
        }
    if (grad_scale) grad_scale->data[c] += sum_gn;
    if (grad_shift) grad_shift->data[c] += sum_g;
    if (grad_in) {
      const T gam = scale.data[c], istd = cache.inv_std[c];
      for (int b = 0; b < B; ++b)
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            const T g = grad_out.at(b, c, y, x);
            const T nv = nrm.at(b, c, y, x);
            grad_in->at(b, c, y, x) +=
                gam * istd * (g - sum_g / n - nv * sum_gn / n);
          }
    }
  }
}

// Eval-mode backward: mean/var are constants, the map is affine per channel.
template <class T>
void batchnorm2d_backward_eval(const BatchNormCache<T>& cache, const TensorT<T>& scale,
                               const TensorT<T>& grad_out, TensorT<T>* grad_in,
                               TensorT<T>* grad_scale, TensorT<T>* grad_shift) {
  const TensorT<T>& nrm = cache.normalized;
  const int B = nrm.batch(), C = nrm.channels(), H = nrm.height(), W = nrm.width();
  for (int c = 0; c < C; ++c) {
    const T gam = scale.data[c], istd = cache.inv_std[c];
    for (int b = 0; b < B; ++b)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const T g = grad_out.at(b, c, y, x);
          if (grad_scale) grad_scale->data[c] += g * nrm.at(b, c, y, x);
          if (grad_shift) grad_shift->data[c] += g;
          if (grad_in) grad_in->at(b, c, y, x) += g * gam * istd;
        }
  }
}

// ---- Elementwise activations --------------------------------------------

// Overflow-safe for |x| up to at least 100.
template <class T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
T softplus_scalar(T x) {
  // log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <class T>
TensorT<T> sigmoid_forward(const TensorT<T>& in) {
  TensorT<T> out = in;
  for (auto& v : out.data) v = sigmoid_scalar(v);
  return out;
}

template <class T>
void sigmoid_backward(const TensorT<T>& out, const TensorT<T>& grad_out,
                      TensorT<T>* grad_in) {
  for (size_t i = 0; i < out.size(); ++i)
    grad_in->data[i] += grad_out.data[i] * out.data[i] * (T(1) - out.data[i]);
}

template <class T>
TensorT<T> silu_forward(const TensorT<T>& in) {
  TensorT<T> out = in;
  for (auto& v : out.data) v = v * sigmoid_scalar(v);
  return out;
}

template <class T>
void silu_backward(const TensorT<T>& in, const TensorT<T>& grad_out,
                   TensorT<T>* grad_in) {
  for (size_t i = 0; i < in.size(); ++i) {
    const T s = sigmoid_scalar(in.data[i]);
    grad_in->data[i] += grad_out.data[i] * (s + in.data[i] * s * (T(1) - s));
  }
}

template <class T>
TensorT<T> softplus_forward(const TensorT<T>& in) {
  TensorT<T> out = in;
  for (auto& v : out.data) v = softplus_scalar(v);
  return out;
}

template <class T>
void softplus_backward(const TensorT<T>& in, const TensorT<T>& grad_out,
                       TensorT<T>* grad_in) {
  for (size_t i = 0; i < in.size(); ++i)
    grad_in->data[i] += grad_out.data[i] * sigmoid_scalar(in.data[i]);
}

// ---- Squeeze and Excitation ---------------------------------------------

template <class T>
struct SECache {
  TensorT<T> pooled;      // (B, C, 1, 1)
  TensorT<T> reduced;     // pre-activation of reduce conv
  TensorT<T> reduced_act; // silu(reduced)
  TensorT<T> expanded;    // pre-activation of expand conv
  TensorT<T> gate;        // sigmoid(expanded), (B, C, 1, 1)
  const TensorT<T>* input = nullptr;
};

// gate = sigmoid(expand(silu(reduce(avgpool(x))))); out = x * gate per channel.
// reduce_w: (R, C, 1, 1) + bias (1,R,1,1); expand_w: (C, R, 1, 1) + bias.
template <class T>
TensorT<T> se_gate_forward(const TensorT<T>& in, const TensorT<T>& reduce_w,
                           const TensorT<T>& reduce_b, const TensorT<T>& expand_w,
                           const TensorT<T>& expand_b, SECache<T>* cache) {
  const int B = in.batch(), C = in.channels(), H = in.height(), W = in.width();
  TensorT<T> pooled(B, C, 1, 1);
  const T inv_n = T(1) / T(H * W);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      T s = 0;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) s += in.at(b, c, y, x);
      pooled.at(b, c, 0, 0) = s * inv_n;
    }
  TensorT<T> reduced = conv2d_forward(pooled, reduce_w, reduce_b);
  TensorT<T> reduced_act = silu_forward(reduced);
  TensorT<T> expanded = conv2d_forward(reduced_act, expand_w, expand_b);
  TensorT<T> gate = sigmoid_forward(expanded);
  TensorT<T> out(B, C, H, W);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T g = gate.at(b, c, 0, 0);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) out.at(b, c, y, x) = in.at(b, c, y, x) * g;
    }
  if (cache) {
    cache->pooled = std::move(pooled);
    cache->reduced = std::move(reduced);
    cache->reduced_act = std::move(reduced_act);
    cache->expanded = std::move(expanded);
    cache->gate = std::move(gate);
    cache->input = &in;
  }
  return out;
}

template <class T>
void se_gate_backward(const SECache<T>& cache, const TensorT<T>& reduce_w,
                      const TensorT<T>& expand_w, const TensorT<T>& grad_out,
                      TensorT<T>* grad_in, TensorT<T>* grad_reduce_w,
                      TensorT<T>* grad_reduce_b, TensorT<T>* grad_expand_w,
                      TensorT<T>* grad_expand_b) {
  const TensorT<T>& in = *cache.input;
  const int B = in.batch(), C = in.channels(), H = in.height(), W = in.width();
  // d/d gate and passthrough term
  TensorT<T> grad_gate(B, C, 1, 1);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T g = cache.gate.at(b, c, 0, 0);
      T acc = 0;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const T go = grad_out.at(b, c, y, x);
          acc += go * in.at(b, c, y, x);
          if (grad_in) grad_in->at(b, c, y, x) += go * g;
        }
      grad_gate.at(b, c, 0, 0) = acc;
    }
  TensorT<T> grad_expanded(B, C, 1, 1);
  {
    TensorT<T> tmp(B, C, 1, 1);
    sigmoid_backward(cache.gate, grad_gate, &tmp);
    grad_expanded = std::move(tmp);
  }
  const int R = reduce_w.batch();
  TensorT<T> grad_reduced_act(B, R, 1, 1);
  conv2d_backward(cache.reduced_act, expand_w, grad_expanded, &grad_reduced_act,
                  grad_expand_w, grad_expand_b);
  TensorT<T> grad_reduced(B, R, 1, 1);
  silu_backward(cache.reduced, grad_reduced_act, &grad_reduced);
  TensorT<T> grad_pooled(B, C, 1, 1);
  conv2d_backward(cache.pooled, reduce_w, grad_reduced, &grad_pooled, grad_reduce_w,
                  grad_reduce_b);
  if (grad_in) {
    const T inv_n = T(1) / T(H * W);
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const T gp = grad_pooled.at(b, c, 0, 0) * inv_n;
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) grad_in->at(b, c, y, x) += gp;
      }
  }
}

// ---- Dropout -------------------------------------------------------------

// Inverted dropout: survivors scaled by 1/(1-rate) so eval mode is identity.
// The mask is a pure function of the stream's (seed, stream id, draw index).
template <class T>
TensorT<T> mc_dropout_forward(const TensorT<T>& in, double rate, RngStream& rng,
                              bool active, std::vector<uint8_t>* mask_out) {
  if (rate < 0.0 || rate >= 1.0)
    throw error("dropout", "rate must lie in [0, 1), got " + std::to_string(rate));
  if (!active || rate == 0.0) {
    if (mask_out) mask_out->assign(in.size(), 1);
    return in;
  }
  TensorT<T> out = in;
  const T keep_scale = T(1.0 / (1.0 - rate));
  if (mask_out) mask_out->assign(in.size(), 0);
  for (size_t i = 0; i < out.data.size(); ++i) {
    if (rng.next_uniform() < rate) {
      out.data[i] = T(0);
    } else {
      out.data[i] *= keep_scale;
      if (mask_out) (*mask_out)[i] = 1;
    }
  }
  return out;
}

template <class T>
void mc_dropout_backward(const std::vector<uint8_t>& mask, double rate,
                         const TensorT<T>& grad_out, TensorT<T>* grad_in) {
  const T keep_scale = T(1.0 / (1.0 - rate));
  for (size_t i = 0; i < mask.size(); ++i)
    grad_in->data[i] += mask[i] ? grad_out.data[i] * keep_scale : T(0);
}

// ---- Border crop ---------------------------------------------------------

template <class T>
TensorT<T> crop_border_forward(const TensorT<T>& in, int margin) {
  if (margin < 0 || 2 * margin >= in.height() || 2 * margin >= in.width())
    throw error("crop", "margin " + std::to_string(margin) +
                            " too large for spatial extent " +
                            std::to_string(in.height()) + "x" + std::to_string(in.width()));
  if (margin == 0) return in;
  const int B = in.batch(), C = in.channels();
  const int H = in.height() - 2 * margin, W = in.width() - 2 * margin;
  TensorT<T> out(B, C, H, W);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          out.at(b, c, y, x) = in.at(b, c, y + margin, x + margin);
  return out;
}

template <class T>
void crop_border_backward(int margin, const TensorT<T>& grad_out, TensorT<T>* grad_in) {
  const int B = grad_out.batch(), C = grad_out.channels();
  const int H = grad_out.height(), W = grad_out.width();
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          grad_in->at(b, c, y + margin, x + margin) += grad_out.at(b, c, y, x);
}

}  // namespace wsci
