#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fsle/arch_config.hpp"
#include "fsle/model_io.hpp"
#include "fsle/tensor.hpp"

namespace fsle {

enum class OpKind {
  kConv,
  kBatchNorm,
  kSilu,
  kAdd,
  kConcat,
  kResize,
  kUnfold,
  kFold,
  kLayerNorm,
  kLinear,
  kAttention,
  kGlobalAvgPool,
};

std::string_view to_string(OpKind op);

struct ParamSpec {
  std::string name;
  Shape shape;
  // Running batchnorm statistics are buffers, not trainable parameters.
  bool trainable = true;
};

struct Node {
  static constexpr int kGraphInput = -1;

  std::string name;
  OpKind op = OpKind::kSilu;
  std::vector<int> inputs;  // earlier node indices, or kGraphInput
  std::vector<int> params;  // indices into ModelGraph::params()
  int stride = 1;
  int padding = 0;
  int groups = 1;
  int heads = 0;
  int patch_h = 0;
  int patch_w = 0;
  float eps = 0.0f;
  Shape out_shape;  // inferred at build time
};

// Feature extractor as a topologically ordered DAG of tensor-core ops mapping
// [C,H,W] to [embedding_dim]. Immutable after build + load_weights, so
// concurrent forward() calls on one graph are safe.
class ModelGraph {
 public:
  const ArchConfig& config() const noexcept { return config_; }
  std::span<const Node> nodes() const noexcept { return nodes_; }
  std::span<const ParamSpec> params() const noexcept { return params_; }
  Shape input_shape() const;
  std::size_t embedding_dim() const;

  bool loaded() const noexcept { return !weights_.empty(); }

  // Every graph parameter must resolve to exactly one bundle tensor of the
  // declared shape; bundle tensors the graph does not declare are rejected.
  void load_weights(const WeightBundle& bundle);

  Tensor forward(const Tensor& image) const;

 private:
  friend ModelGraph build_mobilevit(const ArchConfig& config);
  friend class GraphBuilder;

  ArchConfig config_;
  std::vector<Node> nodes_;
  std::vector<ParamSpec> params_;
  std::vector<Tensor> weights_;
  std::vector<int> last_use_;
};

// Throws Error(kConfig) naming the first inconsistent stage.
ModelGraph build_mobilevit(const ArchConfig& config);

// Seeded synthetic weights for every graph parameter (fan-in scaled uniform
// conv/linear weights, positive variances), with the config as `arch`.
WeightBundle random_weights(const ModelGraph& graph, std::uint64_t seed);

// Graph built from the architecture document stored in the bundle, weights
// loaded.
ModelGraph load_model(const WeightBundle& bundle);

}  // namespace fsle
