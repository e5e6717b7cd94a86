#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsle/model_graph.hpp"

namespace fsle {

struct LayerComplexity {
  std::string name;
  std::string op;
  std::int64_t params = 0;
  std::int64_t macs = 0;
  Shape output_shape;
};

// Analytic counts. Conv MACs = C_out * (C_in/groups) * kH * kW * H' * W';
// linear MACs = rows * in * out; attention MACs = the four D x D projections
// per token plus the two N x N products (QK^T and AV) per batch slice.
// Normalization, activation, resize and reshaping ops count zero MACs.
// Parameters are trainable tensors only; running statistics are buffers.
struct ComplexityReport {
  int height = 0;
  int width = 0;
  std::int64_t param_count = 0;
  std::int64_t buffer_count = 0;
  std::int64_t macs = 0;
  std::int64_t flops_2x = 0;  // always 2 * macs
  std::vector<LayerComplexity> per_layer;
};

// Counting rule for one node given the shape of its first input.
LayerComplexity count_node(const Node& node, const Shape& input_shape,
                           std::span<const ParamSpec> params);

// Walks the graph nodes of `model` rebuilt at the requested resolution.
ComplexityReport complexity(const ModelGraph& model, int height, int width);

struct ComplexityTotals {
  std::int64_t param_count = 0;
  std::int64_t macs = 0;
};

// Second, independent traversal: counts straight from the stage specs
// without building a graph.
ComplexityTotals complexity_from_config(const ArchConfig& config, int height, int width);

enum class FlopsConvention { kMacs, kFlops2x };

struct ConventionMatch {
  FlopsConvention convention;
  std::int64_t value;
  double relative_error;
};

// Picks whichever of {macs, 2*macs} is closer to `reference_flops`.
ConventionMatch closest_convention(const ComplexityReport& report, double reference_flops);

nlohmann::json to_json(const ComplexityReport& report);

}  // namespace fsle
