#pragma once

#include <cstddef>
#include <span>

#include "fsle/tensor.hpp"

// Numerical kernels. Images are channels-first [C,H,W]; all arithmetic and
// accumulation is 32-bit float. Kernels are pure functions of their inputs.
namespace fsle::ops {

inline constexpr float kDefaultEps = 1e-5f;

// input [C_in,H,W], kernel [C_out,C_in,kH,kW], bias [C_out] or empty.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::span<const float> bias,
              int stride, int padding);

// input [C,H,W], kernel [C,kH,kW]; every channel is convolved with its own
// 2-D kernel. bias [C] or empty.
Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel, int stride,
                        int padding, std::span<const float> bias = {});

// out = gamma * (x - mean) / sqrt(var + eps) + beta, per channel of [C,H,W].
Tensor batchnorm_inference(const Tensor& input, const Tensor& mean, const Tensor& var,
                           const Tensor& gamma, const Tensor& beta,
                           float eps = kDefaultEps);

Tensor sigmoid(const Tensor& input);
Tensor silu(const Tensor& input);

// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& input, int axis);

// Normalizes over the last axis. gamma/beta have the size of that axis.
Tensor layernorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                 float eps = kDefaultEps);

// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);

// x [..., in], weight [out,in], bias [out] or empty -> [..., out]
Tensor linear(const Tensor& x, const Tensor& weight, std::span<const float> bias);

// [C,H,W] -> [C]
Tensor global_avg_pool(const Tensor& input);

Tensor add(const Tensor& a, const Tensor& b);

// Concatenates [C1,H,W] and [C2,H,W] into [C1+C2,H,W].
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Bilinear resize of [C,H,W] with half-pixel centers (align_corners=false
// semantics of the common training frameworks).
Tensor resize_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w);

// [C,H,W] -> [P,N,C], P = ph*pw, N = (H/ph)*(W/pw).
// Layout: out[p][n][c] with p = dy*pw + dx (position inside the patch, major)
// and n = py*(W/pw) + px (patch index, minor), reading x[c][py*ph+dy][px*pw+dx].
Tensor unfold(const Tensor& input, int ph, int pw);

// Exact inverse of unfold: [P,N,C] -> [C,H,W].
Tensor fold(const Tensor& patches, std::size_t height, std::size_t width, int ph, int pw);

// Projection weights are [D,D] in (out,in) order; biases [D] or empty.
struct AttentionWeights {
  Tensor wq, wk, wv, wo;
  Tensor bq, bk, bv, bo;
};

// Scaled dot-product attention with `heads` heads of width D/heads, scale
// 1/sqrt(D/heads). x is [N,D] or a batch [B,N,D] attended independently.
Tensor multi_head_attention(const Tensor& x, const AttentionWeights& w, int heads);

}  // namespace fsle::ops
