#include "fsle/complexity.hpp"

#include <cmath>

namespace fsle {
namespace {

std::int64_t count(const Shape& s) { return static_cast<std::int64_t>(shape_product(s)); }

std::int64_t node_macs(const Node& n, const Shape& in_shape,
                       std::span<const ParamSpec> params) {
  switch (n.op) {
    case OpKind::kConv: {
      const Shape& k = params[n.params[0]].shape;  // [C_out, C_in/groups, kH, kW]
      return count(k) * static_cast<std::int64_t>(n.out_shape[1] * n.out_shape[2]);
    }
    case OpKind::kLinear: {
      const Shape& w = params[n.params[0]].shape;
      return count(in_shape) / static_cast<std::int64_t>(w[1]) * count(w);
    }
    case OpKind::kAttention: {
      const auto d = static_cast<std::int64_t>(in_shape.back());
      const auto tokens = static_cast<std::int64_t>(in_shape[in_shape.size() - 2]);
      const std::int64_t batch = count(in_shape) / (tokens * d);
      return batch * tokens * 4 * d * d + batch * 2 * tokens * tokens * d;
    }
    default:
      return 0;
  }
}

std::int64_t conv_macs(std::int64_t c_out, std::int64_t c_in_per_group, std::int64_t k,
                       std::int64_t h, std::int64_t w) {
  return c_out * c_in_per_group * k * k * h * w;
}

}  // namespace

LayerComplexity count_node(const Node& node, const Shape& input_shape,
                           std::span<const ParamSpec> params) {
  LayerComplexity layer{node.name, std::string(to_string(node.op)), 0, 0, node.out_shape};
  for (int p : node.params) {
    if (params[p].trainable) layer.params += count(params[p].shape);
  }
  layer.macs = node_macs(node, input_shape, params);
  return layer;
}

ComplexityReport complexity(const ModelGraph& model, int height, int width) {
  ArchConfig config = model.config();
  config.input_height = height;
  config.input_width = width;
  const ModelGraph g = build_mobilevit(config);

  ComplexityReport r;
  r.height = height;
  r.width = width;
  const Shape input = g.input_shape();
  for (const Node& n : g.nodes()) {
    const Shape& in_shape =
        n.inputs[0] == Node::kGraphInput ? input : g.nodes()[n.inputs[0]].out_shape;
    LayerComplexity layer = count_node(n, in_shape, g.params());
    for (int p : n.params) {
      if (!g.params()[p].trainable) r.buffer_count += count(g.params()[p].shape);
    }
    r.param_count += layer.params;
    r.macs += layer.macs;
    r.per_layer.push_back(std::move(layer));
  }
  r.flops_2x = 2 * r.macs;
  return r;
}

ComplexityTotals complexity_from_config(const ArchConfig& cfg, int height, int width) {
  ArchConfig sized = cfg;
  sized.input_height = height;
  sized.input_width = width;
  const std::vector<StageShape> shapes = validate(sized);

  ComplexityTotals t;
  auto conv_bn = [&](std::int64_t c_in, std::int64_t c_out, std::int64_t k,
                     std::int64_t groups, std::int64_t h, std::int64_t w) {
    t.param_count += c_out * (c_in / groups) * k * k + 2 * c_out;
    t.macs += conv_macs(c_out, c_in / groups, k, h, w);
  };

  std::int64_t c = cfg.stem_channels;
  const std::int64_t stem_h = conv3x3_out(height, 2), stem_w = conv3x3_out(width, 2);
  conv_bn(cfg.in_channels, c, 3, 1, stem_h, stem_w);

  auto inverted_residual = [&](std::int64_t c_in, std::int64_t c_out, std::int64_t expansion,
                               std::int64_t in_h, std::int64_t in_w, std::int64_t out_h,
                               std::int64_t out_w) {
    const std::int64_t hidden = c_in * expansion;
    if (expansion != 1) conv_bn(c_in, hidden, 1, 1, in_h, in_w);
    conv_bn(hidden, hidden, 3, hidden, out_h, out_w);
    conv_bn(hidden, c_out, 1, 1, out_h, out_w);
  };

  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const StageSpec& s = cfg.stages[i];
    const StageShape& sh = shapes[i];
    if (s.type == StageType::kMv2) {
      inverted_residual(c, s.out_channels, s.expansion, sh.in_h, sh.in_w, sh.out_h, sh.out_w);
      for (int j = 1; j < s.num_blocks; ++j) {
        inverted_residual(s.out_channels, s.out_channels, s.expansion, sh.out_h, sh.out_w,
                          sh.out_h, sh.out_w);
      }
    } else {
      inverted_residual(c, s.out_channels, s.expansion, sh.in_h, sh.in_w, sh.out_h, sh.out_w);
      const TransformerSpec& tr = *s.transformer;
      const std::int64_t ch = s.out_channels, d = tr.dim, f = tr.ffn_dim;
      const std::int64_t area = tr.patch_h * tr.patch_w;
      const std::int64_t patches =
          static_cast<std::int64_t>(sh.token_h / tr.patch_h) * (sh.token_w / tr.patch_w);
      const std::int64_t tokens = area * patches;
      conv_bn(ch, ch, 3, 1, sh.out_h, sh.out_w);
      t.param_count += d * ch;
      t.macs += conv_macs(d, ch, 1, sh.out_h, sh.out_w);
      for (int l = 0; l < tr.depth; ++l) {
        t.param_count += 2 * d + 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
        t.macs += tokens * 4 * d * d + area * 2 * patches * patches * d;
        t.macs += tokens * 2 * d * f;
      }
      t.param_count += 2 * d;
      conv_bn(d, ch, 1, 1, sh.out_h, sh.out_w);
      conv_bn(2 * ch, ch, 3, 1, sh.out_h, sh.out_w);
    }
    c = s.out_channels;
  }
  const StageShape& last = shapes.back();
  conv_bn(c, cfg.embedding_dim, 1, 1, last.out_h, last.out_w);
  return t;
}

ConventionMatch closest_convention(const ComplexityReport& report, double reference_flops) {
  const double e_macs = std::abs(static_cast<double>(report.macs) - reference_flops) / reference_flops;
  const double e_2x = std::abs(static_cast<double>(report.flops_2x) - reference_flops) / reference_flops;
  if (e_macs <= e_2x) return {FlopsConvention::kMacs, report.macs, e_macs};
  return {FlopsConvention::kFlops2x, report.flops_2x, e_2x};
}

nlohmann::json to_json(const ComplexityReport& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerComplexity& l : r.per_layer) {
    layers.push_back({{"name", l.name},
                      {"op", l.op},
                      {"params", l.params},
                      {"macs", l.macs},
                      {"output_shape", l.output_shape}});
  }
  return {{"resolution", {r.height, r.width}},
          {"param_count", r.param_count},
          {"buffer_count", r.buffer_count},
          {"macs", r.macs},
          {"flops_2x", r.flops_2x},
          {"per_layer", std::move(layers)}};
}

}  // namespace fsle
