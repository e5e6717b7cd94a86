#include "fsle/model_graph.hpp"

#include <cmath>
#include <optional>
#include <unordered_map>

#include "fsle/ops.hpp"
#include "fsle/rng.hpp"

namespace fsle {

std::string_view to_string(OpKind op) {
  switch (op) {
    case OpKind::kConv: return "conv";
    case OpKind::kBatchNorm: return "batchnorm";
    case OpKind::kSilu: return "silu";
    case OpKind::kAdd: return "add";
    case OpKind::kConcat: return "concat";
    case OpKind::kResize: return "resize";
    case OpKind::kUnfold: return "unfold";
    case OpKind::kFold: return "fold";
    case OpKind::kLayerNorm: return "layernorm";
    case OpKind::kLinear: return "linear";
    case OpKind::kAttention: return "attention";
    case OpKind::kGlobalAvgPool: return "global_avg_pool";
  }
  return "unknown";
}

class GraphBuilder {
 public:
  explicit GraphBuilder(ModelGraph& graph) : g_(graph) {}

  const Shape& shape(int id) const {
    return id == Node::kGraphInput ? input_shape_ : g_.nodes_[id].out_shape;
  }

  void set_input(Shape s) { input_shape_ = std::move(s); }

  int param(const std::string& name, Shape shape, bool trainable = true) {
    g_.params_.push_back({name, std::move(shape), trainable});
    return static_cast<int>(g_.params_.size()) - 1;
  }

  int add_node(Node n) {
    g_.nodes_.push_back(std::move(n));
    return static_cast<int>(g_.nodes_.size()) - 1;
  }

  int conv(const std::string& name, int in, std::size_t out_channels, std::size_t k,
           int stride, bool depthwise) {
    const Shape& s = shape(in);
    const std::size_t c_in = s[0];
    Node n;
    n.name = name;
    n.op = OpKind::kConv;
    n.inputs = {in};
    n.stride = stride;
    n.padding = static_cast<int>(k / 2);
    n.groups = depthwise ? static_cast<int>(c_in) : 1;
    const std::size_t per_group = depthwise ? 1 : c_in;
    n.params = {param(name + ".weight", {out_channels, per_group, k, k})};
    const std::size_t oh = (s[1] + 2 * (k / 2) - k) / stride + 1;
    const std::size_t ow = (s[2] + 2 * (k / 2) - k) / stride + 1;
    n.out_shape = {out_channels, oh, ow};
    return add_node(std::move(n));
  }

  int batchnorm(const std::string& name, int in) {
    const std::size_t c = shape(in)[0];
    Node n;
    n.name = name;
    n.op = OpKind::kBatchNorm;
    n.inputs = {in};
    n.eps = g_.config_.bn_eps;
    n.params = {param(name + ".gamma", {c}), param(name + ".beta", {c}),
                param(name + ".running_mean", {c}, false),
                param(name + ".running_var", {c}, false)};
    n.out_shape = shape(in);
    return add_node(std::move(n));
  }

  int unary(const std::string& name, OpKind op, int in) {
    Node n;
    n.name = name;
    n.op = op;
    n.inputs = {in};
    n.out_shape = shape(in);
    return add_node(std::move(n));
  }

  int binary(const std::string& name, OpKind op, int a, int b) {
    Node n;
    n.name = name;
    n.op = op;
    n.inputs = {a, b};
    n.out_shape = shape(a);
    if (op == OpKind::kConcat) n.out_shape[0] += shape(b)[0];
    return add_node(std::move(n));
  }

  int conv_bn(const std::string& name, int in, std::size_t out_channels, std::size_t k,
              int stride, bool depthwise, bool act) {
    int x = conv(name + ".conv", in, out_channels, k, stride, depthwise);
    x = batchnorm(name + ".bn", x);
    if (act) x = unary(name + ".act", OpKind::kSilu, x);
    return x;
  }

  int mv2(const std::string& name, int in, std::size_t out_channels, int stride,
          int expansion) {
    const std::size_t c_in = shape(in)[0];
    const std::size_t hidden = c_in * static_cast<std::size_t>(expansion);
    int x = in;
    if (expansion != 1) x = conv_bn(name + ".expand", x, hidden, 1, 1, false, true);
    x = conv_bn(name + ".depthwise", x, hidden, 3, stride, true, true);
    x = conv_bn(name + ".project", x, out_channels, 1, 1, false, false);
    if (stride == 1 && c_in == out_channels) x = binary(name + ".residual", OpKind::kAdd, in, x);
    return x;
  }

  int layernorm(const std::string& name, int in) {
    const std::size_t d = shape(in).back();
    Node n;
    n.name = name;
    n.op = OpKind::kLayerNorm;
    n.inputs = {in};
    n.eps = g_.config_.ln_eps;
    n.params = {param(name + ".gamma", {d}), param(name + ".beta", {d})};
    n.out_shape = shape(in);
    return add_node(std::move(n));
  }

  int linear(const std::string& name, int in, std::size_t out_features) {
    const std::size_t d = shape(in).back();
    Node n;
    n.name = name;
    n.op = OpKind::kLinear;
    n.inputs = {in};
    n.params = {param(name + ".weight", {out_features, d}),
                param(name + ".bias", {out_features})};
    n.out_shape = shape(in);
    n.out_shape.back() = out_features;
    return add_node(std::move(n));
  }

  int attention(const std::string& name, int in, int heads) {
    const std::size_t d = shape(in).back();
    Node n;
    n.name = name;
    n.op = OpKind::kAttention;
    n.inputs = {in};
    n.heads = heads;
    for (const char* proj : {"q", "k", "v", "out"}) {
      n.params.push_back(param(name + "." + proj + ".weight", {d, d}));
      n.params.push_back(param(name + "." + proj + ".bias", {d}));
    }
    n.out_shape = shape(in);
    return add_node(std::move(n));
  }

  int resize(const std::string& name, int in, std::size_t h, std::size_t w) {
    Node n;
    n.name = name;
    n.op = OpKind::kResize;
    n.inputs = {in};
    n.out_shape = {shape(in)[0], h, w};
    return add_node(std::move(n));
  }

  int mobilevit_block(const std::string& name, int in, const TransformerSpec& t,
                      const StageShape& stage) {
    const std::size_t c = shape(in)[0];
    const auto d = static_cast<std::size_t>(t.dim);
    int x = conv_bn(name + ".local", in, c, 3, 1, false, true);
    x = conv(name + ".to_tokens", x, d, 1, 1, false);
    const auto h = static_cast<std::size_t>(stage.out_h);
    const auto w = static_cast<std::size_t>(stage.out_w);
    const auto th = static_cast<std::size_t>(stage.token_h);
    const auto tw = static_cast<std::size_t>(stage.token_w);
    const bool resized = th != h || tw != w;
    if (resized) x = resize(name + ".resize_in", x, th, tw);

    Node unfold;
    unfold.name = name + ".unfold";
    unfold.op = OpKind::kUnfold;
    unfold.inputs = {x};
    unfold.patch_h = t.patch_h;
    unfold.patch_w = t.patch_w;
    const auto area = static_cast<std::size_t>(t.patch_h * t.patch_w);
    unfold.out_shape = {area, (th / t.patch_h) * (tw / t.patch_w), d};
    x = add_node(std::move(unfold));

    for (int l = 0; l < t.depth; ++l) {
      const std::string p = name + ".transformer." + std::to_string(l);
      int y = layernorm(p + ".norm1", x);
      y = attention(p + ".attn", y, t.heads);
      x = binary(p + ".residual1", OpKind::kAdd, x, y);
      y = layernorm(p + ".norm2", x);
      y = linear(p + ".ffn1", y, static_cast<std::size_t>(t.ffn_dim));
      y = unary(p + ".ffn_act", OpKind::kSilu, y);
      y = linear(p + ".ffn2", y, d);
      x = binary(p + ".residual2", OpKind::kAdd, x, y);
    }
    x = layernorm(name + ".norm", x);

    Node fold;
    fold.name = name + ".fold";
    fold.op = OpKind::kFold;
    fold.inputs = {x};
    fold.patch_h = t.patch_h;
    fold.patch_w = t.patch_w;
    fold.out_shape = {d, th, tw};
    x = add_node(std::move(fold));
    if (resized) x = resize(name + ".resize_out", x, h, w);

    x = conv_bn(name + ".from_tokens", x, c, 1, 1, false, true);
    x = binary(name + ".concat", OpKind::kConcat, in, x);
    return conv_bn(name + ".fusion", x, c, 3, 1, false, true);
  }

 private:
  ModelGraph& g_;
  Shape input_shape_;
};

ModelGraph build_mobilevit(const ArchConfig& config) {
  const std::vector<StageShape> stage_shapes = validate(config);
  ModelGraph g;
  g.config_ = config;
  GraphBuilder b(g);
  b.set_input(g.input_shape());

  int x = b.conv_bn("stem", Node::kGraphInput, config.stem_channels, 3, 2, false, true);
  for (std::size_t i = 0; i < config.stages.size(); ++i) {
    const StageSpec& s = config.stages[i];
    const std::string prefix = "stages." + std::to_string(i);
    const auto out = static_cast<std::size_t>(s.out_channels);
    if (s.type == StageType::kMv2) {
      for (int j = 0; j < s.num_blocks; ++j) {
        x = b.mv2(prefix + "." + std::to_string(j), x, out, j == 0 ? s.stride : 1,
                  s.expansion);
      }
    } else {
      x = b.mv2(prefix + ".0", x, out, s.stride, s.expansion);
      x = b.mobilevit_block(prefix + ".1", x, *s.transformer, stage_shapes[i]);
    }
  }
  x = b.conv_bn("head", x, config.embedding_dim, 1, 1, false, true);
  b.unary("pool", OpKind::kGlobalAvgPool, x);
  g.nodes_.back().out_shape = {static_cast<std::size_t>(config.embedding_dim)};

  g.last_use_.assign(g.nodes_.size(), -1);
  for (std::size_t i = 0; i < g.nodes_.size(); ++i) {
    for (int in : g.nodes_[i].inputs) {
      if (in >= 0) g.last_use_[in] = static_cast<int>(i);
    }
  }
  return g;
}

Shape ModelGraph::input_shape() const {
  return {static_cast<std::size_t>(config_.in_channels),
          static_cast<std::size_t>(config_.input_height),
          static_cast<std::size_t>(config_.input_width)};
}

std::size_t ModelGraph::embedding_dim() const {
  return static_cast<std::size_t>(config_.embedding_dim);
}

void ModelGraph::load_weights(const WeightBundle& bundle) {
  std::unordered_map<std::string_view, const Tensor*> by_name;
  for (const NamedTensor& t : bundle.tensors) {
    if (!by_name.emplace(t.name, &t.tensor).second) {
      throw Error(ErrorKind::kConfig, "bundle has duplicate tensor '" + t.name + "'");
    }
  }
  std::vector<Tensor> weights;
  weights.reserve(params_.size());
  for (const ParamSpec& p : params_) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      throw Error(ErrorKind::kConfig, "bundle is missing parameter '" + p.name + "'");
    }
    if (it->second->shape() != p.shape) {
      throw Error(ErrorKind::kShapeMismatch,
                  "parameter '" + p.name + "' expects shape " + shape_to_string(p.shape) +
                      ", bundle has " + shape_to_string(it->second->shape()));
    }
    weights.push_back(*it->second);
    by_name.erase(it);
  }
  if (!by_name.empty()) {
    throw Error(ErrorKind::kConfig, "bundle tensor '" + std::string(by_name.begin()->first) +
                                        "' is not a parameter of this graph");
  }
  weights_ = std::move(weights);
}

Tensor ModelGraph::forward(const Tensor& image) const {
  if (!loaded()) throw Error(ErrorKind::kUnloadedWeights, "forward called before load_weights");
  if (image.shape() != input_shape()) {
    throw Error(ErrorKind::kResolutionMismatch,
                "image shape " + shape_to_string(image.shape()) + " does not match " +
                    shape_to_string(input_shape()));
  }
  std::vector<std::optional<Tensor>> values(nodes_.size());
  auto get = [&](int id) -> const Tensor& { return id < 0 ? image : *values[id]; };
  auto w = [&](const Node& n, std::size_t i) -> const Tensor& { return weights_[n.params[i]]; };

  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    const Tensor& x = get(n.inputs[0]);
    Tensor y;
    switch (n.op) {
      case OpKind::kConv: {
        const Tensor& k = w(n, 0);
        if (n.groups == 1) {
          y = ops::conv2d(x, k, {}, n.stride, n.padding);
        } else {
          y = ops::depthwise_conv2d(x, k.reshape({k.dim(0), k.dim(2), k.dim(3)}), n.stride,
                                    n.padding);
        }
        break;
      }
      case OpKind::kBatchNorm:
        y = ops::batchnorm_inference(x, w(n, 2), w(n, 3), w(n, 0), w(n, 1), n.eps);
        break;
      case OpKind::kSilu: y = ops::silu(x); break;
      case OpKind::kAdd: y = ops::add(x, get(n.inputs[1])); break;
      case OpKind::kConcat: y = ops::concat_channels(x, get(n.inputs[1])); break;
      case OpKind::kResize: y = ops::resize_bilinear(x, n.out_shape[1], n.out_shape[2]); break;
      case OpKind::kUnfold: y = ops::unfold(x, n.patch_h, n.patch_w); break;
      case OpKind::kFold:
        y = ops::fold(x, n.out_shape[1], n.out_shape[2], n.patch_h, n.patch_w);
        break;
      case OpKind::kLayerNorm: y = ops::layernorm(x, w(n, 0), w(n, 1), n.eps); break;
      case OpKind::kLinear: y = ops::linear(x, w(n, 0), w(n, 1).data()); break;
      case OpKind::kAttention: {
        const ops::AttentionWeights aw{w(n, 0), w(n, 2), w(n, 4), w(n, 6),
                                       w(n, 1), w(n, 3), w(n, 5), w(n, 7)};
        y = ops::multi_head_attention(x, aw, n.heads);
        break;
      }
      case OpKind::kGlobalAvgPool: y = ops::global_avg_pool(x); break;
    }
    if (y.shape() != n.out_shape) {
      throw Error(ErrorKind::kShapeMismatch, "node '" + n.name + "' produced " +
                                                 shape_to_string(y.shape()) + ", expected " +
                                                 shape_to_string(n.out_shape));
    }
    values[i] = std::move(y);
    for (int in : n.inputs) {
      if (in >= 0 && last_use_[in] == static_cast<int>(i)) values[in].reset();
    }
  }
  return std::move(*values.back());
}

WeightBundle random_weights(const ModelGraph& graph, std::uint64_t seed) {
  WeightBundle bundle;
  bundle.arch = to_json(graph.config());
  Rng rng(seed);
  auto ends_with = [](const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (const ParamSpec& p : graph.params()) {
    Tensor t(p.shape);
    double lo = -0.05, hi = 0.05;
    if (ends_with(p.name, ".weight")) {
      const double fan_in = static_cast<double>(t.size() / p.shape[0]);
      hi = std::sqrt(3.0 / fan_in);
      lo = -hi;
    } else if (ends_with(p.name, "bn.gamma")) {
      lo = 0.8, hi = 1.2;
    } else if (ends_with(p.name, ".gamma")) {
      lo = 0.9, hi = 1.1;
    } else if (ends_with(p.name, ".running_var")) {
      lo = 0.5, hi = 1.5;
    } else if (ends_with(p.name, ".running_mean")) {
      lo = -0.1, hi = 0.1;
    }
    for (float& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
    bundle.tensors.push_back({p.name, std::move(t)});
  }
  return bundle;
}

ModelGraph load_model(const WeightBundle& bundle) {
  if (bundle.arch.is_null()) {
    throw Error(ErrorKind::kConfig, "bundle carries no architecture document");
  }
  ModelGraph graph = build_mobilevit(arch_from_json(bundle.arch));
  graph.load_weights(bundle);
  return graph;
}

}  // namespace fsle
