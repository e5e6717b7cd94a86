#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace fsle {

struct TransformerSpec {
  int dim = 0;
  int ffn_dim = 0;
  int depth = 0;
  int heads = 0;
  int patch_h = 2;
  int patch_w = 2;
};

enum class StageType { kMv2, kMobileVit };

// One backbone stage. An MV2 stage is `num_blocks` inverted-residual blocks,
// the first with `stride`. A MobileViT stage is one strided MV2 block followed
// by a MobileViT block at `out_channels`.
struct StageSpec {
  StageType type = StageType::kMv2;
  int out_channels = 0;
  int stride = 1;
  int expansion = 2;
  int num_blocks = 1;
  std::optional<TransformerSpec> transformer;
};

struct ArchConfig {
  int input_height = 256;
  int input_width = 256;
  int in_channels = 3;
  int stem_channels = 16;
  std::vector<StageSpec> stages;
  // Width of the final 1x1 expansion; also the embedding width.
  int embedding_dim = 320;
  // When a MobileViT block sees spatial dims not divisible by its patch size,
  // bilinearly resize up to the next multiple and back afterwards. With this
  // off, such configs fail validation.
  bool resize_to_patch = true;
  float bn_eps = 1e-5f;
  float ln_eps = 1e-5f;
};

// MobileViT-XXS: stem 16, MV2 expansion 2, transformer widths 64/80/96 with
// depths 2/4/3, 4 heads, 2x2 patches, final 1x1 conv to 320.
ArchConfig mobilevit_xxs(int height = 256, int width = 256);

struct StageShape {
  int in_channels, in_h, in_w;
  int out_channels, out_h, out_w;
  // Spatial size the MobileViT block unfolds at (after any resize).
  int token_h = 0, token_w = 0;
};

// Throws Error(kConfig) naming the first inconsistent stage.
std::vector<StageShape> validate(const ArchConfig& config);

// Output spatial size of a 3x3 conv with padding 1.
int conv3x3_out(int size, int stride);

nlohmann::json to_json(const ArchConfig& config);
ArchConfig arch_from_json(const nlohmann::json& j);

}  // namespace fsle
