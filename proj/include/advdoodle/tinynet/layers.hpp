#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "advdoodle/error.hpp"
#include "advdoodle/tinynet/tensor.hpp"

namespace advdoodle::tinynet {

enum class LayerKind : std::uint32_t {
  conv = 1,
  relu = 2,
  maxpool = 3,
  global_avg_pool = 4,
  linear = 5,
  softmax = 6,
};

inline std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::global_avg_pool: return "gap";
    case LayerKind::linear: return "fc";
    case LayerKind::softmax: return "softmax";
  }
  return "?";
}

/// One entry of an architecture descriptor. Convolutions use "same" padding
/// (kernel / 2); max pooling is 2x2 with stride 2.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int in = 0;
  int out = 0;
  int kernel = 0;
  int stride = 1;

  static LayerSpec conv(int in, int out, int kernel, int stride = 1) {
    return {LayerKind::conv, in, out, kernel, stride};
  }
  static LayerSpec relu() { return {LayerKind::relu}; }
  static LayerSpec maxpool() { return {LayerKind::maxpool}; }
  static LayerSpec gap() { return {LayerKind::global_avg_pool}; }
  static LayerSpec linear(int in, int out) { return {LayerKind::linear, in, out}; }
  static LayerSpec softmax() { return {LayerKind::softmax}; }

  std::size_t weight_count() const {
    switch (kind) {
      case LayerKind::conv: return static_cast<std::size_t>(out) * in * kernel * kernel;
      case LayerKind::linear: return static_cast<std::size_t>(out) * in;
      default: return 0;
    }
  }
  std::size_t bias_count() const {
    return (kind == LayerKind::conv || kind == LayerKind::linear) ? static_cast<std::size_t>(out)
                                                                   : 0;
  }
  bool has_params() const { return weight_count() > 0; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

template <typename T>
struct LayerParams {
  std::vector<T> weights;
  std::vector<T> bias;
};

/// Output shape of one layer for a given input shape.
inline std::vector<int> output_shape(const LayerSpec& s, const std::vector<int>& in) {
  switch (s.kind) {
    case LayerKind::conv: {
      check(in.size() == 3 && in[0] == s.in, ErrorKind::invalid_input, "conv input mismatch");
      const int pad = s.kernel / 2;
      return {s.out, (in[1] + 2 * pad - s.kernel) / s.stride + 1,
              (in[2] + 2 * pad - s.kernel) / s.stride + 1};
    }
    case LayerKind::relu: return in;
    case LayerKind::maxpool:
      check(in.size() == 3 && in[1] >= 2 && in[2] >= 2, ErrorKind::invalid_input,
            "maxpool input too small");
      return {in[0], in[1] / 2, in[2] / 2};
    case LayerKind::global_avg_pool:
      check(in.size() == 3, ErrorKind::invalid_input, "gap needs a feature map");
      return {in[0]};
    case LayerKind::linear:
      check(Tensor<float>::volume(in) == static_cast<std::size_t>(s.in), ErrorKind::invalid_input,
            "fc input mismatch");
      return {s.out};
    case LayerKind::softmax: return in;
  }
  throw Error(ErrorKind::invalid_input, "unknown layer kind");
}

namespace kernels {

template <typename T>
void pad_input(const Tensor<T>& in, int pad, std::vector<T>& padded, int& hp, int& wp) {
  const int c = in.dim(0), h = in.dim(1), w = in.dim(2);
  hp = h + 2 * pad;
  wp = w + 2 * pad;
  padded.assign(static_cast<std::size_t>(c) * hp * wp, T(0));
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      std::copy_n(in.data.data() + (static_cast<std::size_t>(ch) * h + y) * w, w,
                  padded.data() + (static_cast<std::size_t>(ch) * hp + y + pad) * wp + pad);
}

/// Output rows per im2col tile; keeps a tile of columns near 256 pixels.
inline int conv_tile_rows(int wo) { return std::max(1, 256 / std::max(1, wo)); }

/// Gathers the receptive fields of output rows [y0, y1) into col[kk][pixel].
template <typename T>
void im2col_tile(const LayerSpec& s, const T* padded, int wp, std::size_t plane_in, int wo,
                 int y0, int y1, T* col) {
  const int k = s.kernel, stride = s.stride;
  const std::size_t tile = static_cast<std::size_t>(y1 - y0) * wo;
  std::size_t kk = 0;
  for (int ic = 0; ic < s.in; ++ic) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++kk) {
        T* dst = col + kk * tile;
        for (int y = y0; y < y1; ++y) {
          const T* src = padded + ic * plane_in + static_cast<std::size_t>(y * stride + ky) * wp + kx;
          if (stride == 1) {
            std::copy_n(src, wo, dst);
          } else {
            for (int x = 0; x < wo; ++x) dst[x] = src[x * stride];
          }
          dst += wo;
        }
      }
    }
  }
}

template <typename T>
void conv_forward(const LayerSpec& s, const LayerParams<T>& p, const Tensor<T>& in, Tensor<T>& out,
                  std::vector<T>& scratch, std::vector<T>& col) {
  const int pad = s.kernel / 2;
  int hp, wp;
  pad_input(in, pad, scratch, hp, wp);
  out.reshape(output_shape(s, in.shape));
  const int ho = out.dim(1), wo = out.dim(2);
  const std::size_t plane_in = static_cast<std::size_t>(hp) * wp;
  const std::size_t plane_out = static_cast<std::size_t>(ho) * wo;
  const std::size_t kdim = static_cast<std::size_t>(s.in) * s.kernel * s.kernel;
  const int rows = conv_tile_rows(wo);
  col.resize(kdim * static_cast<std::size_t>(rows) * wo);
  for (int y0 = 0; y0 < ho; y0 += rows) {
    const int y1 = std::min(ho, y0 + rows);
    const std::size_t tile = static_cast<std::size_t>(y1 - y0) * wo;
    im2col_tile(s, scratch.data(), wp, plane_in, wo, y0, y1, col.data());
    int oc = 0;
    // Four output channels per pass share each column load.
    for (; oc + 4 <= s.out; oc += 4) {
      T* __restrict a0 = out.data.data() + oc * plane_out + static_cast<std::size_t>(y0) * wo;
      T* __restrict a1 = a0 + plane_out;
      T* __restrict a2 = a1 + plane_out;
      T* __restrict a3 = a2 + plane_out;
      std::fill_n(a0, tile, p.bias[oc]);
      std::fill_n(a1, tile, p.bias[oc + 1]);
      std::fill_n(a2, tile, p.bias[oc + 2]);
      std::fill_n(a3, tile, p.bias[oc + 3]);
      const T* w = p.weights.data() + oc * kdim;
      for (std::size_t kk = 0; kk < kdim; ++kk) {
        const T w0 = w[kk], w1 = w[kdim + kk], w2 = w[2 * kdim + kk], w3 = w[3 * kdim + kk];
        const T* __restrict c = col.data() + kk * tile;
        for (std::size_t i = 0; i < tile; ++i) {
          const T cv = c[i];
          a0[i] += w0 * cv;
          a1[i] += w1 * cv;
          a2[i] += w2 * cv;
          a3[i] += w3 * cv;
        }
      }
    }
    for (; oc < s.out; ++oc) {
      T* __restrict a = out.data.data() + oc * plane_out + static_cast<std::size_t>(y0) * wo;
      std::fill_n(a, tile, p.bias[oc]);
      const T* w = p.weights.data() + oc * kdim;
      for (std::size_t kk = 0; kk < kdim; ++kk) {
        const T wv = w[kk];
        const T* __restrict c = col.data() + kk * tile;
        for (std::size_t i = 0; i < tile; ++i) a[i] += wv * c[i];
      }
    }
  }
}

/// Any of grad_in / grad_p may be null.
template <typename T>
void conv_backward(const LayerSpec& s, const LayerParams<T>& p, const Tensor<T>& in,
                   const Tensor<T>& grad_out, Tensor<T>* grad_in, LayerParams<T>* grad_p,
                   std::vector<T>& scratch, std::vector<T>& scratch_grad, std::vector<T>& col) {
  const int pad = s.kernel / 2, k = s.kernel, stride = s.stride;
  const int ho = grad_out.dim(1), wo = grad_out.dim(2);
  const std::size_t plane_out = static_cast<std::size_t>(ho) * wo;
  int hp, wp;
  pad_input(in, pad, scratch, hp, wp);
  const std::size_t plane_in = static_cast<std::size_t>(hp) * wp;
  const std::size_t kdim = static_cast<std::size_t>(s.in) * k * k;
  const int rows = conv_tile_rows(wo);
  col.resize(kdim * static_cast<std::size_t>(rows) * wo);
  if (grad_in) scratch_grad.assign(static_cast<std::size_t>(s.in) * plane_in, T(0));

  for (int y0 = 0; y0 < ho; y0 += rows) {
    const int y1 = std::min(ho, y0 + rows);
    const std::size_t tile = static_cast<std::size_t>(y1 - y0) * wo;
    const std::size_t g_off = static_cast<std::size_t>(y0) * wo;

    if (grad_p) {
      im2col_tile(s, scratch.data(), wp, plane_in, wo, y0, y1, col.data());
      for (int oc = 0; oc < s.out; ++oc) {
        const T* __restrict g = grad_out.data.data() + oc * plane_out + g_off;
        T bsum = T(0);
        for (std::size_t i = 0; i < tile; ++i) bsum += g[i];
        grad_p->bias[oc] += bsum;
        T* gw = grad_p->weights.data() + oc * kdim;
        for (std::size_t kk = 0; kk < kdim; ++kk) {
          const T* __restrict c = col.data() + kk * tile;
          T dotv = T(0);
          for (std::size_t i = 0; i < tile; ++i) dotv += g[i] * c[i];
          gw[kk] += dotv;
        }
      }
    }

    if (grad_in) {
      // d col = W^T g, then scatter back onto the padded input grid.
      std::fill_n(col.data(), kdim * tile, T(0));
      int oc = 0;
      for (; oc + 4 <= s.out; oc += 4) {
        const T* __restrict g0 = grad_out.data.data() + oc * plane_out + g_off;
        const T* __restrict g1 = g0 + plane_out;
        const T* __restrict g2 = g1 + plane_out;
        const T* __restrict g3 = g2 + plane_out;
        const T* w = p.weights.data() + oc * kdim;
        for (std::size_t kk = 0; kk < kdim; ++kk) {
          const T w0 = w[kk], w1 = w[kdim + kk], w2 = w[2 * kdim + kk], w3 = w[3 * kdim + kk];
          T* __restrict c = col.data() + kk * tile;
          for (std::size_t i = 0; i < tile; ++i)
            c[i] += w0 * g0[i] + w1 * g1[i] + w2 * g2[i] + w3 * g3[i];
        }
      }
      for (; oc < s.out; ++oc) {
        const T* __restrict g = grad_out.data.data() + oc * plane_out + g_off;
        const T* w = p.weights.data() + oc * kdim;
        for (std::size_t kk = 0; kk < kdim; ++kk) {
          const T wv = w[kk];
          T* __restrict c = col.data() + kk * tile;
          for (std::size_t i = 0; i < tile; ++i) c[i] += wv * g[i];
        }
      }
      std::size_t kk = 0;
      for (int ic = 0; ic < s.in; ++ic) {
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx, ++kk) {
            const T* src = col.data() + kk * tile;
            for (int y = y0; y < y1; ++y) {
              T* dst = scratch_grad.data() + ic * plane_in +
                       static_cast<std::size_t>(y * stride + ky) * wp + kx;
              if (stride == 1) {
                for (int x = 0; x < wo; ++x) dst[x] += src[x];
              } else {
                for (int x = 0; x < wo; ++x) dst[x * stride] += src[x];
              }
              src += wo;
            }
          }
        }
      }
    }
  }

  if (grad_in) {
    grad_in->reshape(in.shape);
    const int h = in.dim(1), w = in.dim(2);
    for (int ic = 0; ic < s.in; ++ic)
      for (int y = 0; y < h; ++y)
        std::copy_n(scratch_grad.data() + ic * plane_in + static_cast<std::size_t>(y + pad) * wp + pad,
                    w, grad_in->data.data() + (static_cast<std::size_t>(ic) * h + y) * w);
  }
}

template <typename T>
void relu_forward(const Tensor<T>& in, Tensor<T>& out) {
  out.shape = in.shape;
  out.data.resize(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = in.data[i] > T(0) ? in.data[i] : T(0);
}

template <typename T>
void relu_backward(const Tensor<T>& in, const Tensor<T>& grad_out, Tensor<T>& grad_in) {
  grad_in.shape = in.shape;
  grad_in.data.resize(in.size());
  for (std::size_t i = 0; i < in.size(); ++i)
    grad_in.data[i] = in.data[i] > T(0) ? grad_out.data[i] : T(0);
}

template <typename T>
void maxpool_forward(const Tensor<T>& in, Tensor<T>& out) {
  const int c = in.dim(0), h = in.dim(1), w = in.dim(2);
  const int ho = h / 2, wo = w / 2;
  out.shape = {c, ho, wo};
  out.data.resize(static_cast<std::size_t>(c) * ho * wo);
  for (int ch = 0; ch < c; ++ch) {
    const T* src = in.data.data() + static_cast<std::size_t>(ch) * h * w;
    T* dst = out.data.data() + static_cast<std::size_t>(ch) * ho * wo;
    for (int y = 0; y < ho; ++y) {
      const T* r0 = src + static_cast<std::size_t>(2 * y) * w;
      const T* r1 = r0 + w;
      for (int x = 0; x < wo; ++x)
        dst[y * wo + x] = std::max(std::max(r0[2 * x], r0[2 * x + 1]),
                                   std::max(r1[2 * x], r1[2 * x + 1]));
    }
  }
}

/// Routes each gradient to the first maximal element of its window (row-major order).
template <typename T>
void maxpool_backward(const Tensor<T>& in, const Tensor<T>& grad_out, Tensor<T>& grad_in) {
  const int c = in.dim(0), h = in.dim(1), w = in.dim(2);
  const int ho = h / 2, wo = w / 2;
  grad_in.reshape(in.shape);
  for (int ch = 0; ch < c; ++ch) {
    const std::size_t base = static_cast<std::size_t>(ch) * h * w;
    for (int y = 0; y < ho; ++y) {
      for (int x = 0; x < wo; ++x) {
        std::size_t best = base + static_cast<std::size_t>(2 * y) * w + 2 * x;
        const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
        for (std::size_t idx : cand)
          if (in.data[idx] > in.data[best]) best = idx;
        grad_in.data[best] += grad_out.data[(static_cast<std::size_t>(ch) * ho + y) * wo + x];
      }
    }
  }
}

template <typename T>
void gap_forward(const Tensor<T>& in, Tensor<T>& out) {
  const int c = in.dim(0);
  const std::size_t plane = static_cast<std::size_t>(in.dim(1)) * in.dim(2);
  out.shape = {c};
  out.data.resize(c);
  for (int ch = 0; ch < c; ++ch) {
    T acc = T(0);
    const T* src = in.data.data() + ch * plane;
    for (std::size_t i = 0; i < plane; ++i) acc += src[i];
    out.data[ch] = acc / static_cast<T>(plane);
  }
}

template <typename T>
void gap_backward(const Tensor<T>& in, const Tensor<T>& grad_out, Tensor<T>& grad_in) {
  const int c = in.dim(0);
  const std::size_t plane = static_cast<std::size_t>(in.dim(1)) * in.dim(2);
  grad_in.shape = in.shape;
  grad_in.data.resize(in.size());
  for (int ch = 0; ch < c; ++ch)
    std::fill_n(grad_in.data.data() + ch * plane, plane, grad_out.data[ch] / static_cast<T>(plane));
}

template <typename T>
void linear_forward(const LayerSpec& s, const LayerParams<T>& p, const Tensor<T>& in,
                    Tensor<T>& out) {
  out.shape = {s.out};
  out.data.resize(s.out);
  for (int o = 0; o < s.out; ++o) {
    const T* w = p.weights.data() + static_cast<std::size_t>(o) * s.in;
    T acc = p.bias[o];
    for (int i = 0; i < s.in; ++i) acc += w[i] * in.data[i];
    out.data[o] = acc;
  }
}

template <typename T>
void linear_backward(const LayerSpec& s, const LayerParams<T>& p, const Tensor<T>& in,
                     const Tensor<T>& grad_out, Tensor<T>* grad_in, LayerParams<T>* grad_p) {
  if (grad_p) {
    for (int o = 0; o < s.out; ++o) {
      const T g = grad_out.data[o];
      grad_p->bias[o] += g;
      T* gw = grad_p->weights.data() + static_cast<std::size_t>(o) * s.in;
      for (int i = 0; i < s.in; ++i) gw[i] += g * in.data[i];
    }
  }
  if (grad_in) {
    grad_in->shape = in.shape;
    grad_in->data.assign(in.size(), T(0));
    for (int o = 0; o < s.out; ++o) {
      const T g = grad_out.data[o];
      const T* w = p.weights.data() + static_cast<std::size_t>(o) * s.in;
      for (int i = 0; i < s.in; ++i) grad_in->data[i] += g * w[i];
    }
  }
}

/// Numerically stable softmax.
template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  const T mx = *std::max_element(logits.begin(), logits.end());
  std::vector<T> p(logits.size());
  T sum = T(0);
  for (std::size_t i = 0; i < logits.size(); ++i) sum += (p[i] = std::exp(logits[i] - mx));
  for (auto& v : p) v /= sum;
  return p;
}

template <typename T>
T log_softmax_at(std::span<const T> logits, std::size_t idx) {
  const T mx = *std::max_element(logits.begin(), logits.end());
  T sum = T(0);
  for (T z : logits) sum += std::exp(z - mx);
  return logits[idx] - mx - std::log(sum);
}

}  // namespace kernels
}  // namespace advdoodle::tinynet
