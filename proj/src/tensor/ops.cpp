#include "fsle/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace fsle::ops {
namespace {

void require(bool ok, ErrorKind kind, const std::string& message) {
  if (!ok) throw Error(kind, message);
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  require(t.rank() == rank && !t.empty(), ErrorKind::kShapeMismatch,
          std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
              shape_to_string(t.shape()));
}

struct Window {
  std::size_t out_h, out_w;
};

Window conv_window(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                   int stride, int padding) {
  require(stride >= 1, ErrorKind::kInvalidHyperparameter,
          "stride must be >= 1, got " + std::to_string(stride));
  require(padding >= 0, ErrorKind::kInvalidHyperparameter,
          "padding must be >= 0, got " + std::to_string(padding));
  const std::size_t ph = h + 2 * static_cast<std::size_t>(padding);
  const std::size_t pw = w + 2 * static_cast<std::size_t>(padding);
  require(kh <= ph && kw <= pw, ErrorKind::kInvalidHyperparameter,
          "kernel larger than padded input");
  return {(ph - kh) / stride + 1, (pw - kw) / stride + 1};
}

// Accumulates weight * in_plane (one kernel tap) into out_plane.
void accumulate_tap(const float* in_plane, std::size_t h, std::size_t w, float weight,
                    float* out_plane, std::size_t out_h, std::size_t out_w, int stride,
                    int padding, std::size_t ky, std::size_t kx) {
  const long s = stride;
  const long p = padding;
  // Valid ox range: 0 <= ox*s - p + kx < w.
  const long lo_num = p - static_cast<long>(kx);
  const long ox_begin = lo_num <= 0 ? 0 : (lo_num + s - 1) / s;
  const long hi_num = static_cast<long>(w) - 1 + p - static_cast<long>(kx);
  if (hi_num < 0) return;
  const long ox_end = std::min<long>(static_cast<long>(out_w), hi_num / s + 1);
  if (ox_begin >= ox_end) return;
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const long iy = static_cast<long>(oy) * s - p + static_cast<long>(ky);
    if (iy < 0 || iy >= static_cast<long>(h)) continue;
    const float* in_row = in_plane + iy * static_cast<long>(w);
    float* out_row = out_plane + oy * out_w;
    if (s == 1) {
      const float* src = in_row - p + static_cast<long>(kx);
      for (long ox = ox_begin; ox < ox_end; ++ox) out_row[ox] += weight * src[ox];
    } else {
      for (long ox = ox_begin; ox < ox_end; ++ox) {
        out_row[ox] += weight * in_row[ox * s - p + static_cast<long>(kx)];
      }
    }
  }
}

float stable_sigmoid(float x) {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::span<const float> bias,
              int stride, int padding) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  const std::size_t c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t c_out = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  require(kernel.dim(1) == c_in, ErrorKind::kShapeMismatch,
          "conv2d: input has " + std::to_string(c_in) + " channels, kernel expects " +
              std::to_string(kernel.dim(1)));
  require(bias.empty() || bias.size() == c_out, ErrorKind::kShapeMismatch,
          "conv2d: bias length must equal output channels");
  const Window win = conv_window(h, w, kh, kw, stride, padding);

  Tensor out({c_out, win.out_h, win.out_w});
  const std::size_t plane = win.out_h * win.out_w;
  const float* in = input.data().data();
  const float* k = kernel.data().data();
  float* o = out.data().data();
  for (std::size_t oc = 0; oc < c_out; ++oc) {
    float* out_plane = o + oc * plane;
    if (!bias.empty()) std::fill(out_plane, out_plane + plane, bias[oc]);
    for (std::size_t ic = 0; ic < c_in; ++ic) {
      const float* in_plane = in + ic * h * w;
      const float* taps = k + (oc * c_in + ic) * kh * kw;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          accumulate_tap(in_plane, h, w, taps[ky * kw + kx], out_plane, win.out_h,
                         win.out_w, stride, padding, ky, kx);
        }
      }
    }
  }
  return out;
}

Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel, int stride,
                        int padding, std::span<const float> bias) {
  require_rank(input, 3, "depthwise_conv2d input");
  require_rank(kernel, 3, "depthwise_conv2d kernel");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t kh = kernel.dim(1), kw = kernel.dim(2);
  require(kernel.dim(0) == c, ErrorKind::kShapeMismatch,
          "depthwise_conv2d: input has " + std::to_string(c) + " channels, kernel has " +
              std::to_string(kernel.dim(0)));
  require(bias.empty() || bias.size() == c, ErrorKind::kShapeMismatch,
          "depthwise_conv2d: bias length must equal channels");
  const Window win = conv_window(h, w, kh, kw, stride, padding);

  Tensor out({c, win.out_h, win.out_w});
  const std::size_t plane = win.out_h * win.out_w;
  for (std::size_t ch = 0; ch < c; ++ch) {
    float* out_plane = out.data().data() + ch * plane;
    if (!bias.empty()) std::fill(out_plane, out_plane + plane, bias[ch]);
    const float* in_plane = input.data().data() + ch * h * w;
    const float* taps = kernel.data().data() + ch * kh * kw;
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        accumulate_tap(in_plane, h, w, taps[ky * kw + kx], out_plane, win.out_h,
                       win.out_w, stride, padding, ky, kx);
      }
    }
  }
  return out;
}

Tensor batchnorm_inference(const Tensor& input, const Tensor& mean, const Tensor& var,
                           const Tensor& gamma, const Tensor& beta, float eps) {
  require_rank(input, 3, "batchnorm input");
  const std::size_t c = input.dim(0);
  for (const Tensor* t : {&mean, &var, &gamma, &beta}) {
    require(t->size() == c, ErrorKind::kShapeMismatch,
            "batchnorm: per-channel statistics must have " + std::to_string(c) +
                " entries");
  }
  require(eps >= 0.0f, ErrorKind::kInvalidHyperparameter, "batchnorm: eps must be >= 0");
  for (std::size_t ch = 0; ch < c; ++ch) {
    require(var[ch] >= 0.0f, ErrorKind::kNegativeVariance,
            "batchnorm: negative variance in channel " + std::to_string(ch));
  }
  Tensor out(input.shape());
  const std::size_t plane = input.dim(1) * input.dim(2);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float scale = gamma[ch] / std::sqrt(var[ch] + eps);
    const float shift = beta[ch] - mean[ch] * scale;
    const float* src = input.data().data() + ch * plane;
    float* dst = out.data().data() + ch * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * scale + shift;
  }
  return out;
}

Tensor sigmoid(const Tensor& input) {
  Tensor out = input;
  for (float& v : out.data()) v = stable_sigmoid(v);
  return out;
}

Tensor silu(const Tensor& input) {
  Tensor out = input;
  for (float& v : out.data()) v = v * stable_sigmoid(v);
  return out;
}

Tensor softmax(const Tensor& input, int axis) {
  require(!input.empty(), ErrorKind::kShapeMismatch, "softmax: empty input");
  const int rank = static_cast<int>(input.rank());
  if (axis < 0) axis += rank;
  require(axis >= 0 && axis < rank, ErrorKind::kShapeMismatch,
          "softmax: axis out of range for shape " + shape_to_string(input.shape()));
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= input.dim(i);
  for (int i = axis + 1; i < rank; ++i) inner *= input.dim(i);
  const std::size_t n = input.dim(axis);

  Tensor out(input.shape());
  const float* src = input.data().data();
  float* dst = out.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      float max_v = src[base];
      for (std::size_t i = 1; i < n; ++i) max_v = std::max(max_v, src[base + i * inner]);
      float sum = 0.0f;
      for (std::size_t i = 0; i < n; ++i) {
        const float e = std::exp(src[base + i * inner] - max_v);
        dst[base + i * inner] = e;
        sum += e;
      }
      const float inv = 1.0f / sum;
      for (std::size_t i = 0; i < n; ++i) dst[base + i * inner] *= inv;
    }
  }
  return out;
}

Tensor layernorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                 float eps) {
  require(!input.empty(), ErrorKind::kShapeMismatch, "layernorm: empty input");
  const std::size_t d = input.shape().back();
  require(gamma.size() == d && beta.size() == d, ErrorKind::kShapeMismatch,
          "layernorm: gamma/beta must match the last axis (" + std::to_string(d) + ")");
  const std::size_t rows = input.size() / d;
  Tensor out(input.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* x = input.data().data() + r * d;
    float* y = out.data().data() + r * d;
    float mean = 0.0f;
    for (std::size_t i = 0; i < d; ++i) mean += x[i];
    mean /= static_cast<float>(d);
    float var = 0.0f;
    for (std::size_t i = 0; i < d; ++i) {
      const float c = x[i] - mean;
      var += c * c;
    }
    var /= static_cast<float>(d);
    const float inv = 1.0f / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) y[i] = (x[i] - mean) * inv * gamma[i] + beta[i];
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, ErrorKind::kShapeMismatch,
          "matmul: inner dimensions differ (" + shape_to_string(a.shape()) + " x " +
              shape_to_string(b.shape()) + ")");
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    float* row = out.data().data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = a[i * k + p];
      const float* brow = b.data().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, std::span<const float> bias) {
  require(!x.empty(), ErrorKind::kShapeMismatch, "linear: empty input");
  require_rank(weight, 2, "linear weight");
  const std::size_t in = x.shape().back();
  const std::size_t out_features = weight.dim(0);
  require(weight.dim(1) == in, ErrorKind::kShapeMismatch,
          "linear: input width " + std::to_string(in) + " does not match weight " +
              shape_to_string(weight.shape()));
  require(bias.empty() || bias.size() == out_features, ErrorKind::kShapeMismatch,
          "linear: bias length must equal output features");
  const std::size_t rows = x.size() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_features;
  Tensor out(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x.data().data() + r * in;
    float* yr = out.data().data() + r * out_features;
    for (std::size_t o = 0; o < out_features; ++o) {
      const float* wr = weight.data().data() + o * in;
      float acc = 0.0f;
      for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
      yr[o] = bias.empty() ? acc : acc + bias[o];
    }
  }
  return out;
}

Tensor global_avg_pool(const Tensor& input) {
  require_rank(input, 3, "global_avg_pool input");
  const std::size_t c = input.dim(0), plane = input.dim(1) * input.dim(2);
  Tensor out({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* src = input.data().data() + ch * plane;
    float sum = 0.0f;
    for (std::size_t i = 0; i < plane; ++i) sum += src[i];
    out[ch] = sum / static_cast<float>(plane);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), ErrorKind::kShapeMismatch,
          "add: shapes differ " + shape_to_string(a.shape()) + " vs " +
              shape_to_string(b.shape()));
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "concat lhs");
  require_rank(b, 3, "concat rhs");
  require(a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2), ErrorKind::kShapeMismatch,
          "concat: spatial dims differ");
  Tensor out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + a.size());
  return out;
}

Tensor resize_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  require_rank(input, 3, "resize input");
  require(out_h > 0 && out_w > 0, ErrorKind::kInvalidHyperparameter,
          "resize: target size must be positive");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (out_h == h && out_w == w) return input;

  struct Tap {
    std::size_t i0, i1;
    float l0, l1;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> result(out);
    const float scale = static_cast<float>(in) / static_cast<float>(out);
    for (std::size_t o = 0; o < out; ++o) {
      float src = scale * (static_cast<float>(o) + 0.5f) - 0.5f;
      if (src < 0.0f) src = 0.0f;
      const auto i0 = static_cast<std::size_t>(src);
      const std::size_t step = i0 < in - 1 ? 1 : 0;
      const float l1 = src - static_cast<float>(i0);
      result[o] = {i0, i0 + step, 1.0f - l1, l1};
    }
    return result;
  };
  const auto ty = taps(h, out_h);
  const auto tx = taps(w, out_w);

  Tensor out({c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* src = input.data().data() + ch * h * w;
    float* dst = out.data().data() + ch * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const Tap& y = ty[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const Tap& x = tx[ox];
        dst[oy * out_w + ox] =
            y.l0 * (x.l0 * src[y.i0 * w + x.i0] + x.l1 * src[y.i0 * w + x.i1]) +
            y.l1 * (x.l0 * src[y.i1 * w + x.i0] + x.l1 * src[y.i1 * w + x.i1]);
      }
    }
  }
  return out;
}

Tensor unfold(const Tensor& input, int ph, int pw) {
  require_rank(input, 3, "unfold input");
  require(ph >= 1 && pw >= 1, ErrorKind::kInvalidHyperparameter,
          "unfold: patch size must be positive");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const auto uph = static_cast<std::size_t>(ph), upw = static_cast<std::size_t>(pw);
  require(h % uph == 0 && w % upw == 0, ErrorKind::kShapeMismatch,
          "unfold: patch " + std::to_string(ph) + "x" + std::to_string(pw) +
              " does not divide feature map " + std::to_string(h) + "x" +
              std::to_string(w));
  const std::size_t nh = h / uph, nw = w / upw;
  const std::size_t patch_area = uph * upw, patches = nh * nw;
  Tensor out({patch_area, patches, c});
  float* dst = out.data().data();
  const float* src = input.data().data();
  for (std::size_t dy = 0; dy < uph; ++dy) {
    for (std::size_t dx = 0; dx < upw; ++dx) {
      const std::size_t p = dy * upw + dx;
      for (std::size_t py = 0; py < nh; ++py) {
        for (std::size_t px = 0; px < nw; ++px) {
          const std::size_t n = py * nw + px;
          const std::size_t pixel = (py * uph + dy) * w + px * upw + dx;
          float* token = dst + (p * patches + n) * c;
          for (std::size_t ch = 0; ch < c; ++ch) token[ch] = src[ch * h * w + pixel];
        }
      }
    }
  }
  return out;
}

Tensor fold(const Tensor& patches, std::size_t height, std::size_t width, int ph,
            int pw) {
  require_rank(patches, 3, "fold input");
  require(ph >= 1 && pw >= 1, ErrorKind::kInvalidHyperparameter,
          "fold: patch size must be positive");
  const auto uph = static_cast<std::size_t>(ph), upw = static_cast<std::size_t>(pw);
  require(height % uph == 0 && width % upw == 0, ErrorKind::kShapeMismatch,
          "fold: patch size does not divide target size");
  const std::size_t nh = height / uph, nw = width / upw;
  require(patches.dim(0) == uph * upw && patches.dim(1) == nh * nw,
          ErrorKind::kShapeMismatch,
          "fold: patch tensor " + shape_to_string(patches.shape()) +
              " does not match target " + std::to_string(height) + "x" +
              std::to_string(width));
  const std::size_t c = patches.dim(2), count = nh * nw;
  Tensor out({c, height, width});
  float* dst = out.data().data();
  const float* src = patches.data().data();
  for (std::size_t dy = 0; dy < uph; ++dy) {
    for (std::size_t dx = 0; dx < upw; ++dx) {
      const std::size_t p = dy * upw + dx;
      for (std::size_t py = 0; py < nh; ++py) {
        for (std::size_t px = 0; px < nw; ++px) {
          const std::size_t n = py * nw + px;
          const std::size_t pixel = (py * uph + dy) * width + px * upw + dx;
          const float* token = src + (p * count + n) * c;
          for (std::size_t ch = 0; ch < c; ++ch) dst[ch * height * width + pixel] = token[ch];
        }
      }
    }
  }
  return out;
}

Tensor multi_head_attention(const Tensor& x, const AttentionWeights& w, int heads) {
  require(x.rank() == 2 || x.rank() == 3, ErrorKind::kShapeMismatch,
          "attention: input must be [N,D] or [B,N,D]");
  require(heads >= 1, ErrorKind::kInvalidHyperparameter, "attention: heads must be >= 1");
  const std::size_t d = x.shape().back();
  const std::size_t n = x.dim(x.rank() - 2);
  const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
  const auto h = static_cast<std::size_t>(heads);
  require(d % h == 0, ErrorKind::kShapeMismatch,
          "attention: width " + std::to_string(d) + " not divisible by " +
              std::to_string(heads) + " heads");
  for (const Tensor* m : {&w.wq, &w.wk, &w.wv, &w.wo}) {
    require(m->rank() == 2 && m->dim(0) == d && m->dim(1) == d, ErrorKind::kShapeMismatch,
            "attention: projection weights must be [D,D]");
  }
  const std::size_t hd = d / h;
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

  const Tensor q = linear(x, w.wq, w.bq.data());
  const Tensor k = linear(x, w.wk, w.bk.data());
  const Tensor v = linear(x, w.wv, w.bv.data());
  Tensor context(x.shape());
  std::vector<float> scores(n);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * n * d;
    for (std::size_t head = 0; head < h; ++head) {
      const std::size_t off = head * hd;
      for (std::size_t i = 0; i < n; ++i) {
        const float* qi = q.data().data() + base + i * d + off;
        float max_s = -INFINITY;
        for (std::size_t j = 0; j < n; ++j) {
          const float* kj = k.data().data() + base + j * d + off;
          float s = 0.0f;
          for (std::size_t t = 0; t < hd; ++t) s += qi[t] * kj[t];
          scores[j] = s * scale;
          max_s = std::max(max_s, scores[j]);
        }
        float sum = 0.0f;
        for (std::size_t j = 0; j < n; ++j) {
          scores[j] = std::exp(scores[j] - max_s);
          sum += scores[j];
        }
        const float inv = 1.0f / sum;
        float* ci = context.data().data() + base + i * d + off;
        for (std::size_t j = 0; j < n; ++j) {
          const float a = scores[j] * inv;
          const float* vj = v.data().data() + base + j * d + off;
          for (std::size_t t = 0; t < hd; ++t) ci[t] += a * vj[t];
        }
      }
    }
  }
  return linear(context, w.wo, w.bo.data());
}

}  // namespace fsle::ops
