#include <cmath>
#include <set>
#include <unordered_map>

#include "fsle/distill.hpp"
#include "fsle/rng.hpp"

namespace fsle {
namespace {

constexpr double kLayerNormEps = 1e-5;

struct OpName {
  LayerKind kind;
  std::string_view name;
};

constexpr OpName kOps[] = {
    {LayerKind::kLinear, "linear"},
    {LayerKind::kConv2d, "conv2d"},
    {LayerKind::kDepthwiseConv2d, "depthwise_conv2d"},
    {LayerKind::kSilu, "silu"},
    {LayerKind::kLayerNorm, "layernorm"},
    {LayerKind::kGlobalAvgPool, "global_avg_pool"},
    {LayerKind::kFlatten, "flatten"},
};

// Engine ops that exist for inference but have no backward pass here.
const std::set<std::string, std::less<>> kInferenceOnly = {
    "batchnorm", "attention", "resize", "unfold", "fold", "concat", "add", "softmax", "argmax",
};

bool has_params(LayerKind k) {
  return k == LayerKind::kLinear || k == LayerKind::kConv2d ||
         k == LayerKind::kDepthwiseConv2d || k == LayerKind::kLayerNorm;
}

[[noreturn]] void bad_layer(std::size_t i, const std::string& what) {
  throw Error(ErrorKind::kConfig, "student layer " + std::to_string(i) + ": " + what);
}

Shape layer_output(const LayerSpec& l, const Shape& in, std::size_t i) {
  switch (l.kind) {
    case LayerKind::kLinear: {
      if (l.out == 0) bad_layer(i, "linear needs out >= 1");
      Shape s = in;
      s.back() = l.out;
      return s;
    }
    case LayerKind::kConv2d:
    case LayerKind::kDepthwiseConv2d: {
      if (in.size() != 3) bad_layer(i, "convolution needs a [C,H,W] input");
      if (l.kernel < 1 || l.stride < 1 || l.padding < 0) {
        bad_layer(i, "kernel and stride must be >= 1, padding >= 0");
      }
      const long h = (static_cast<long>(in[1]) + 2 * l.padding - l.kernel) / l.stride + 1;
      const long w = (static_cast<long>(in[2]) + 2 * l.padding - l.kernel) / l.stride + 1;
      if (static_cast<long>(in[1]) + 2 * l.padding < l.kernel ||
          static_cast<long>(in[2]) + 2 * l.padding < l.kernel || h < 1 || w < 1) {
        bad_layer(i, "kernel larger than padded input " + shape_to_string(in));
      }
      std::size_t c = in[0];
      if (l.kind == LayerKind::kConv2d) {
        if (l.out == 0) bad_layer(i, "conv2d needs out >= 1");
        c = l.out;
      } else if (l.out != 0 && l.out != in[0]) {
        bad_layer(i, "depthwise_conv2d keeps the channel count");
      }
      return {c, static_cast<std::size_t>(h), static_cast<std::size_t>(w)};
    }
    case LayerKind::kSilu:
    case LayerKind::kLayerNorm:
      return in;
    case LayerKind::kGlobalAvgPool:
      if (in.size() != 3) bad_layer(i, "global_avg_pool needs a [C,H,W] input");
      return {in[0]};
    case LayerKind::kFlatten:
      return {shape_product(in)};
  }
  bad_layer(i, "unknown layer");
}

template <typename T>
T sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const OpName& op : kOps) {
    if (op.kind == kind) return op.name;
  }
  return "unknown";
}

std::vector<Shape> infer_shapes(const StudentSpec& spec) {
  if (spec.input_shape.empty()) throw Error(ErrorKind::kConfig, "student input_shape is empty");
  for (std::size_t d : spec.input_shape) {
    if (d == 0) throw Error(ErrorKind::kConfig, "student input_shape has a zero dimension");
  }
  if (spec.layers.empty()) throw Error(ErrorKind::kConfig, "student has no layers");
  int parameterized = 0;
  std::vector<Shape> shapes;
  Shape s = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    parameterized += has_params(spec.layers[i].kind);
    s = layer_output(spec.layers[i], s, i);
    shapes.push_back(s);
  }
  if (parameterized > kMaxParameterizedLayers) {
    throw Error(ErrorKind::kConfig, "student has " + std::to_string(parameterized) +
                                        " parameterized layers, at most " +
                                        std::to_string(kMaxParameterizedLayers) + " allowed");
  }
  if (s.size() != 1) {
    throw Error(ErrorKind::kConfig, "student output " + shape_to_string(s) +
                                        " is not a vector; end with global_avg_pool or flatten");
  }
  return shapes;
}

nlohmann::json to_json(const StudentSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerSpec& l : spec.layers) {
    nlohmann::json j = {{"op", to_string(l.kind)}};
    if (l.kind == LayerKind::kLinear || l.kind == LayerKind::kConv2d) j["out"] = l.out;
    if (l.kind == LayerKind::kConv2d || l.kind == LayerKind::kDepthwiseConv2d) {
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
    }
    layers.push_back(std::move(j));
  }
  return {{"input_shape", spec.input_shape}, {"layers", std::move(layers)}};
}

StudentSpec student_from_json(const nlohmann::json& j) {
  StudentSpec spec;
  try {
    spec.input_shape = j.at("input_shape").get<Shape>();
    for (const auto& lj : j.at("layers")) {
      const std::string op = lj.at("op").get<std::string>();
      LayerSpec l;
      bool found = false;
      for (const OpName& o : kOps) {
        if (o.name == op) {
          l.kind = o.kind;
          found = true;
        }
      }
      if (!found) {
        if (kInferenceOnly.contains(op)) {
          throw Error(ErrorKind::kNonDifferentiable,
                      "op '" + op + "' has no backward pass and cannot appear in a student");
        }
        throw Error(ErrorKind::kConfig, "unknown student op '" + op + "'");
      }
      l.out = lj.value("out", std::size_t{0});
      l.kernel = lj.value("kernel", 3);
      l.stride = lj.value("stride", 1);
      l.padding = lj.value("padding", 1);
      spec.layers.push_back(l);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("invalid student spec: ") + e.what());
  }
  infer_shapes(spec);
  return spec;
}

template <typename T>
Network<T>::Network(StudentSpec spec, std::size_t projection_dim, std::uint64_t seed)
    : spec_(std::move(spec)), projection_dim_(projection_dim) {
  const std::vector<Shape> shapes = infer_shapes(spec_);
  std::vector<LayerSpec> all = spec_.layers;
  if (projection_dim_ > 0) all.push_back({LayerKind::kLinear, projection_dim_, 0, 1, 0});

  Rng rng(seed);
  auto add_param = [&](const std::string& name, Shape shape, double bound, bool unit) {
    BasicTensor<T> v(shape);
    for (T& x : v.data()) x = unit ? T(1) : static_cast<T>(rng.uniform(-bound, bound));
    params_.push_back({name, std::move(v), BasicTensor<T>(shape)});
  };

  Shape in = spec_.input_shape;
  for (std::size_t i = 0; i < all.size(); ++i) {
    Layer layer{all[i], in, {}, params_.size(), 0};
    layer.out_shape = i < shapes.size() ? shapes[i] : Shape{projection_dim_};
    const std::string prefix =
        i < spec_.layers.size() ? "layers." + std::to_string(i) : std::string("projection");
    const LayerSpec& l = all[i];
    const auto k = static_cast<std::size_t>(l.kernel);
    switch (l.kind) {
      case LayerKind::kLinear: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in.back()));
        add_param(prefix + ".weight", {l.out, in.back()}, bound, false);
        add_param(prefix + ".bias", {l.out}, bound, false);
        break;
      }
      case LayerKind::kConv2d: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in[0] * k * k));
        add_param(prefix + ".weight", {l.out, in[0], k, k}, bound, false);
        add_param(prefix + ".bias", {l.out}, bound, false);
        break;
      }
      case LayerKind::kDepthwiseConv2d: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(k * k));
        add_param(prefix + ".weight", {in[0], 1, k, k}, bound, false);
        add_param(prefix + ".bias", {in[0]}, bound, false);
        break;
      }
      case LayerKind::kLayerNorm:
        add_param(prefix + ".gamma", {in.back()}, 0.0, true);
        add_param(prefix + ".beta", {in.back()}, 0.0, false);
        break;
      default:
        break;
    }
    layer.param_count = params_.size() - layer.first_param;
    in = layer.out_shape;
    layers_.push_back(std::move(layer));
  }
}

template <typename T>
std::size_t Network<T>::embedding_dim() const {
  return layers_[spec_.layers.size() - 1].out_shape[0];
}

template <typename T>
std::size_t Network<T>::output_dim() const {
  return layers_.back().out_shape[0];
}

template <typename T>
BasicTensor<T> Network<T>::layer_forward(const Layer& layer, const BasicTensor<T>& x) const {
  const LayerSpec& l = layer.spec;
  const Shape& is = layer.in_shape;
  const Shape& os = layer.out_shape;
  BasicTensor<T> y(os);
  switch (l.kind) {
    case LayerKind::kLinear: {
      const auto& w = params_[layer.first_param].value;
      const auto& b = params_[layer.first_param + 1].value;
      const std::size_t in = is.back(), out = os.back(), rows = x.size() / in;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out; ++o) {
          T acc = b[o];
          for (std::size_t i = 0; i < in; ++i) acc += w[o * in + i] * x[r * in + i];
          y[r * out + o] = acc;
        }
      break;
    }
    case LayerKind::kConv2d:
    case LayerKind::kDepthwiseConv2d: {
      const bool dw = l.kind == LayerKind::kDepthwiseConv2d;
      const auto& w = params_[layer.first_param].value;
      const auto& b = params_[layer.first_param + 1].value;
      const long C = static_cast<long>(is[0]), H = static_cast<long>(is[1]),
                 W = static_cast<long>(is[2]);
      const long O = static_cast<long>(os[0]), OH = static_cast<long>(os[1]),
                 OW = static_cast<long>(os[2]);
      const long K = l.kernel, S = l.stride, P = l.padding;
      const long cin = dw ? 1 : C;
      for (long o = 0; o < O; ++o)
        for (long oy = 0; oy < OH; ++oy)
          for (long ox = 0; ox < OW; ++ox) {
            T acc = b[o];
            for (long ci = 0; ci < cin; ++ci) {
              const long c = dw ? o : ci;
              for (long ky = 0; ky < K; ++ky) {
                const long iy = oy * S - P + ky;
                if (iy < 0 || iy >= H) continue;
                for (long kx = 0; kx < K; ++kx) {
                  const long ix = ox * S - P + kx;
                  if (ix < 0 || ix >= W) continue;
                  acc += w[((o * cin + ci) * K + ky) * K + kx] * x[(c * H + iy) * W + ix];
                }
              }
            }
            y[(o * OH + oy) * OW + ox] = acc;
          }
      break;
    }
    case LayerKind::kSilu:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * sigmoid(x[i]);
      break;
    case LayerKind::kLayerNorm: {
      const auto& g = params_[layer.first_param].value;
      const auto& b = params_[layer.first_param + 1].value;
      const std::size_t n = is.back(), rows = x.size() / n;
      for (std::size_t r = 0; r < rows; ++r) {
        T mean = 0, var = 0;
        for (std::size_t i = 0; i < n; ++i) mean += x[r * n + i];
        mean /= static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) var += (x[r * n + i] - mean) * (x[r * n + i] - mean);
        var /= static_cast<T>(n);
        const T inv = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        for (std::size_t i = 0; i < n; ++i) y[r * n + i] = (x[r * n + i] - mean) * inv * g[i] + b[i];
      }
      break;
    }
    case LayerKind::kGlobalAvgPool: {
      const std::size_t hw = is[1] * is[2];
      for (std::size_t c = 0; c < is[0]; ++c) {
        T acc = 0;
        for (std::size_t i = 0; i < hw; ++i) acc += x[c * hw + i];
        y[c] = acc / static_cast<T>(hw);
      }
      break;
    }
    case LayerKind::kFlatten:
      std::copy(x.data().begin(), x.data().end(), y.data().begin());
      break;
  }
  return y;
}

template <typename T>
BasicTensor<T> Network<T>::layer_backward(const Layer& layer, const BasicTensor<T>& x,
                                          const BasicTensor<T>& gy) {
  const LayerSpec& l = layer.spec;
  const Shape& is = layer.in_shape;
  const Shape& os = layer.out_shape;
  BasicTensor<T> gx(is);
  switch (l.kind) {
    case LayerKind::kLinear: {
      auto& w = params_[layer.first_param];
      auto& b = params_[layer.first_param + 1];
      const std::size_t in = is.back(), out = os.back(), rows = x.size() / in;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out; ++o) {
          const T g = gy[r * out + o];
          b.grad[o] += g;
          for (std::size_t i = 0; i < in; ++i) {
            w.grad[o * in + i] += g * x[r * in + i];
            gx[r * in + i] += g * w.value[o * in + i];
          }
        }
      break;
    }
    case LayerKind::kConv2d:
    case LayerKind::kDepthwiseConv2d: {
      const bool dw = l.kind == LayerKind::kDepthwiseConv2d;
      auto& w = params_[layer.first_param];
      auto& b = params_[layer.first_param + 1];
      const long C = static_cast<long>(is[0]), H = static_cast<long>(is[1]),
                 W = static_cast<long>(is[2]);
      const long O = static_cast<long>(os[0]), OH = static_cast<long>(os[1]),
                 OW = static_cast<long>(os[2]);
      const long K = l.kernel, S = l.stride, P = l.padding;
      const long cin = dw ? 1 : C;
      for (long o = 0; o < O; ++o)
        for (long oy = 0; oy < OH; ++oy)
          for (long ox = 0; ox < OW; ++ox) {
            const T g = gy[(o * OH + oy) * OW + ox];
            b.grad[o] += g;
            for (long ci = 0; ci < cin; ++ci) {
              const long c = dw ? o : ci;
              for (long ky = 0; ky < K; ++ky) {
                const long iy = oy * S - P + ky;
                if (iy < 0 || iy >= H) continue;
                for (long kx = 0; kx < K; ++kx) {
                  const long ix = ox * S - P + kx;
                  if (ix < 0 || ix >= W) continue;
                  const long wi = ((o * cin + ci) * K + ky) * K + kx;
                  const long xi = (c * H + iy) * W + ix;
                  w.grad[wi] += g * x[xi];
                  gx[xi] += g * w.value[wi];
                }
              }
            }
          }
      break;
    }
    case LayerKind::kSilu:
      for (std::size_t i = 0; i < x.size(); ++i) {
        const T s = sigmoid(x[i]);
        gx[i] = gy[i] * s * (T(1) + x[i] * (T(1) - s));
      }
      break;
    case LayerKind::kLayerNorm: {
      auto& g = params_[layer.first_param];
      auto& b = params_[layer.first_param + 1];
      const std::size_t n = is.back(), rows = x.size() / n;
      std::vector<T> xhat(n), gxhat(n);
      for (std::size_t r = 0; r < rows; ++r) {
        T mean = 0, var = 0;
        for (std::size_t i = 0; i < n; ++i) mean += x[r * n + i];
        mean /= static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) var += (x[r * n + i] - mean) * (x[r * n + i] - mean);
        var /= static_cast<T>(n);
        const T inv = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        T mean_g = 0, mean_gx = 0;
        for (std::size_t i = 0; i < n; ++i) {
          xhat[i] = (x[r * n + i] - mean) * inv;
          const T gi = gy[r * n + i];
          g.grad[i] += gi * xhat[i];
          b.grad[i] += gi;
          gxhat[i] = gi * g.value[i];
          mean_g += gxhat[i];
          mean_gx += gxhat[i] * xhat[i];
        }
        mean_g /= static_cast<T>(n);
        mean_gx /= static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
          gx[r * n + i] = inv * (gxhat[i] - mean_g - xhat[i] * mean_gx);
        }
      }
      break;
    }
    case LayerKind::kGlobalAvgPool: {
      const std::size_t hw = is[1] * is[2];
      for (std::size_t c = 0; c < is[0]; ++c)
        for (std::size_t i = 0; i < hw; ++i) gx[c * hw + i] = gy[c] / static_cast<T>(hw);
      break;
    }
    case LayerKind::kFlatten:
      std::copy(gy.data().begin(), gy.data().end(), gx.data().begin());
      break;
  }
  return gx;
}

template <typename T>
BasicTensor<T> Network<T>::forward(const BasicTensor<T>& x, Tape* tape, bool project) const {
  if (x.shape() != spec_.input_shape) {
    throw Error(ErrorKind::kShapeMismatch, "student input " + shape_to_string(x.shape()) +
                                               " does not match " +
                                               shape_to_string(spec_.input_shape));
  }
  const std::size_t count = project ? layers_.size() : spec_.layers.size();
  if (tape) tape->inputs.clear();
  BasicTensor<T> h = x;
  for (std::size_t i = 0; i < count; ++i) {
    BasicTensor<T> next = layer_forward(layers_[i], h);
    if (tape) tape->inputs.push_back(std::move(h));
    h = std::move(next);
  }
  return h;
}

template <typename T>
BasicTensor<T> Network<T>::backward(const Tape& tape, const BasicTensor<T>& grad_out) {
  if (tape.inputs.empty() || tape.inputs.size() > layers_.size()) {
    throw Error(ErrorKind::kInvalidArgument, "backward needs the tape of a forward pass");
  }
  const std::size_t count = tape.inputs.size();
  if (grad_out.shape() != layers_[count - 1].out_shape) {
    throw Error(ErrorKind::kShapeMismatch, "upstream gradient " +
                                               shape_to_string(grad_out.shape()) +
                                               " does not match network output");
  }
  BasicTensor<T> g = grad_out;
  for (std::size_t i = count; i-- > 0;) g = layer_backward(layers_[i], tape.inputs[i], g);
  return g;
}

template <typename T>
void Network<T>::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.data().begin(), p.grad.data().end(), T(0));
}

template <typename T>
WeightBundle Network<T>::to_bundle() const {
  WeightBundle b;
  b.arch = {{"family", "student"},
            {"student", to_json(spec_)},
            {"projection_dim", projection_dim_}};
  for (const auto& p : params_) b.tensors.push_back({p.name, tensor_cast<float>(p.value)});
  return b;
}

template <typename T>
void Network<T>::load(const WeightBundle& bundle) {
  if (bundle.tensors.size() != params_.size()) {
    throw Error(ErrorKind::kConfig, "bundle has " + std::to_string(bundle.tensors.size()) +
                                        " tensors, student has " +
                                        std::to_string(params_.size()) + " parameters");
  }
  std::vector<BasicTensor<T>> values;
  for (const auto& p : params_) {
    const Tensor* t = bundle.find(p.name);
    if (!t) throw Error(ErrorKind::kConfig, "bundle is missing parameter '" + p.name + "'");
    if (t->shape() != p.value.shape()) {
      throw Error(ErrorKind::kShapeMismatch, "parameter '" + p.name + "' shape mismatch");
    }
    values.push_back(tensor_cast<T>(*t));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].value = std::move(values[i]);
}

template class Network<float>;
template class Network<double>;

Network<float> load_student(const WeightBundle& bundle) {
  const nlohmann::json& a = bundle.arch;
  if (!a.is_object() || a.value("family", "") != "student" || !a.contains("student")) {
    throw Error(ErrorKind::kConfig, "bundle does not describe a student network");
  }
  Network<float> net(student_from_json(a["student"]), a.value("projection_dim", std::size_t{0}), 0);
  net.load(bundle);
  return net;
}

}  // namespace fsle
