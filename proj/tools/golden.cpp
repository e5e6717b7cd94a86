// Writes the backbone golden fixture: seeded inputs and the embeddings the
// engine produces for them with seeded random XXS weights at 84x84.
//
//   fsle_golden --out-dir tests/golden [--seed 7] [--images 3]

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "fsle/model_graph.hpp"
#include "fsle/rng.hpp"

int main(int argc, char** argv) {
  std::string out_dir;
  std::uint64_t seed = 7;
  int images = 3;
  int resolution = 84;
  CLI::App app{"Regenerate the backbone golden fixture", "fsle_golden"};
  app.add_option("--out-dir", out_dir)->required();
  app.add_option("--seed", seed, "Weight seed; inputs use derive_seed(seed, 1)")->capture_default_str();
  app.add_option("--images", images)->capture_default_str();
  app.add_option("--resolution", resolution)->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  using namespace fsle;
  try {
    ModelGraph g = build_mobilevit(mobilevit_xxs(resolution, resolution));
    g.load_weights(random_weights(g, seed));
    const Shape in = g.input_shape();
    EmbeddingDataset inputs(in[0] * in[1] * in[2]);
    EmbeddingDataset expected(g.embedding_dim());
    Rng rng(derive_seed(seed, 1));
    for (int i = 0; i < images; ++i) {
      Tensor x(in);
      for (float& v : x.data()) v = static_cast<float>(rng.normal());
      inputs.push_back(i, x.data());
      expected.push_back(i, g.forward(x).data());
    }
    inputs.attributes = {{"input_shape", in}, {"input_seed", derive_seed(seed, 1)}};
    expected.attributes = {{"weights", "random_weights(mobilevit_xxs)"},
                           {"weights_seed", seed},
                           {"resolution", resolution}};
    std::filesystem::create_directories(out_dir);
    const std::string stem = "xxs" + std::to_string(resolution);
    save_embeddings(std::filesystem::path(out_dir) / (stem + "_inputs.fsle"), inputs);
    save_embeddings(std::filesystem::path(out_dir) / (stem + "_expected.fsle"), expected);
  } catch (const std::exception& e) {
    std::cerr << "fsle_golden: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
