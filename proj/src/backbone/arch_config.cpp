#include "fsle/arch_config.hpp"

#include <string>

#include "fsle/error.hpp"

namespace fsle {
namespace {

std::string stage_name(std::size_t index) { return "stage " + std::to_string(index + 1); }

void check(bool ok, const std::string& where, const std::string& what) {
  if (!ok) throw Error(ErrorKind::kConfig, where + ": " + what);
}

int round_up(int v, int m) { return (v + m - 1) / m * m; }

}  // namespace

ArchConfig mobilevit_xxs(int height, int width) {
  ArchConfig c;
  c.input_height = height;
  c.input_width = width;
  c.stem_channels = 16;
  c.embedding_dim = 320;
  c.stages = {
      {StageType::kMv2, 16, 1, 2, 1, std::nullopt},
      {StageType::kMv2, 24, 2, 2, 3, std::nullopt},
      {StageType::kMobileVit, 48, 2, 2, 1, TransformerSpec{64, 128, 2, 4, 2, 2}},
      {StageType::kMobileVit, 64, 2, 2, 1, TransformerSpec{80, 160, 4, 4, 2, 2}},
      {StageType::kMobileVit, 80, 2, 2, 1, TransformerSpec{96, 192, 3, 4, 2, 2}},
  };
  return c;
}

int conv3x3_out(int size, int stride) { return (size + 2 - 3) / stride + 1; }

std::vector<StageShape> validate(const ArchConfig& config) {
  check(config.input_height >= 1 && config.input_width >= 1, "input",
        "resolution must be positive");
  check(config.in_channels >= 1, "input", "in_channels must be positive");
  check(config.stem_channels >= 1, "stem", "stem_channels must be positive");
  check(config.embedding_dim >= 1, "head", "embedding_dim must be positive");
  check(config.bn_eps > 0.0f && config.ln_eps > 0.0f, "input", "eps must be positive");

  std::vector<StageShape> shapes;
  int c = config.stem_channels;
  int h = conv3x3_out(config.input_height, 2);
  int w = conv3x3_out(config.input_width, 2);
  for (std::size_t i = 0; i < config.stages.size(); ++i) {
    const StageSpec& s = config.stages[i];
    const std::string where = stage_name(i);
    check(s.out_channels >= 1, where, "out_channels must be positive");
    check(s.stride == 1 || s.stride == 2, where, "stride must be 1 or 2");
    check(s.expansion >= 1, where, "expansion must be >= 1");
    check(s.num_blocks >= 1, where, "num_blocks must be >= 1");
    StageShape shape{c, h, w, s.out_channels, conv3x3_out(h, s.stride),
                     conv3x3_out(w, s.stride)};
    check(shape.out_h >= 1 && shape.out_w >= 1, where, "feature map vanishes");
    if (s.type == StageType::kMobileVit) {
      check(s.transformer.has_value(), where, "MobileViT stage needs a transformer spec");
      const TransformerSpec& t = *s.transformer;
      check(t.dim >= 1 && t.ffn_dim >= 1 && t.depth >= 0, where,
            "transformer dims must be positive");
      check(t.heads >= 1 && t.dim % t.heads == 0, where,
            "transformer dim " + std::to_string(t.dim) + " not divisible by " +
                std::to_string(t.heads) + " heads");
      check(t.patch_h >= 1 && t.patch_w >= 1, where, "patch size must be positive");
      const bool divisible = shape.out_h % t.patch_h == 0 && shape.out_w % t.patch_w == 0;
      check(divisible || config.resize_to_patch, where,
            "patch " + std::to_string(t.patch_h) + "x" + std::to_string(t.patch_w) +
                " does not divide feature map " + std::to_string(shape.out_h) + "x" +
                std::to_string(shape.out_w) + " and resizing is disabled");
      shape.token_h = round_up(shape.out_h, t.patch_h);
      shape.token_w = round_up(shape.out_w, t.patch_w);
    } else {
      check(!s.transformer.has_value(), where, "MV2 stage must not carry a transformer");
    }
    shapes.push_back(shape);
    c = shape.out_channels;
    h = shape.out_h;
    w = shape.out_w;
  }
  return shapes;
}

nlohmann::json to_json(const ArchConfig& config) {
  nlohmann::json stages = nlohmann::json::array();
  for (const StageSpec& s : config.stages) {
    nlohmann::json js = {
        {"type", s.type == StageType::kMv2 ? "mv2" : "mobilevit"},
        {"out_channels", s.out_channels},
        {"stride", s.stride},
        {"expansion", s.expansion},
        {"num_blocks", s.num_blocks},
    };
    if (s.transformer) {
      const TransformerSpec& t = *s.transformer;
      js["transformer"] = {{"dim", t.dim},         {"ffn_dim", t.ffn_dim},
                           {"depth", t.depth},     {"heads", t.heads},
                           {"patch_h", t.patch_h}, {"patch_w", t.patch_w}};
    }
    stages.push_back(std::move(js));
  }
  return {
      {"family", "mobilevit"},
      {"input_resolution", {config.input_height, config.input_width}},
      {"in_channels", config.in_channels},
      {"stem_channels", config.stem_channels},
      {"stages", std::move(stages)},
      {"embedding_dim", config.embedding_dim},
      {"resize_to_patch", config.resize_to_patch},
      {"bn_eps", config.bn_eps},
      {"ln_eps", config.ln_eps},
  };
}

ArchConfig arch_from_json(const nlohmann::json& j) {
  try {
    ArchConfig c;
    const auto& res = j.at("input_resolution");
    c.input_height = res.at(0).get<int>();
    c.input_width = res.at(1).get<int>();
    c.in_channels = j.value("in_channels", 3);
    c.stem_channels = j.at("stem_channels").get<int>();
    c.embedding_dim = j.at("embedding_dim").get<int>();
    c.resize_to_patch = j.value("resize_to_patch", true);
    c.bn_eps = j.value("bn_eps", 1e-5f);
    c.ln_eps = j.value("ln_eps", 1e-5f);
    for (const auto& js : j.at("stages")) {
      StageSpec s;
      const std::string type = js.at("type").get<std::string>();
      if (type == "mv2") {
        s.type = StageType::kMv2;
      } else if (type == "mobilevit") {
        s.type = StageType::kMobileVit;
      } else {
        throw Error(ErrorKind::kConfig, "unknown stage type '" + type + "'");
      }
      s.out_channels = js.at("out_channels").get<int>();
      s.stride = js.at("stride").get<int>();
      s.expansion = js.value("expansion", 2);
      s.num_blocks = js.value("num_blocks", 1);
      if (js.contains("transformer")) {
        const auto& jt = js["transformer"];
        s.transformer = TransformerSpec{jt.at("dim").get<int>(),    jt.at("ffn_dim").get<int>(),
                                        jt.at("depth").get<int>(),  jt.at("heads").get<int>(),
                                        jt.value("patch_h", 2),     jt.value("patch_w", 2)};
      }
      c.stages.push_back(s);
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("invalid architecture config: ") + e.what());
  }
}

}  // namespace fsle
