// Frozen backbone output. The fixture in tests/golden comes from
// `fsle_golden --out-dir tests/golden` and is cross-checked against an
// independent torch implementation by tests/reference/mobilevit_reference.py.

#include <gtest/gtest.h>

#include <cmath>

#include "fsle/model_graph.hpp"

namespace fsle {
namespace {

const std::filesystem::path kGolden = FSLE_GOLDEN_DIR;

TEST(Golden, Xxs84EmbeddingsMatchFrozenValues) {
  const EmbeddingDataset inputs = load_embeddings(kGolden / "xxs84_inputs.fsle");
  const EmbeddingDataset expected = load_embeddings(kGolden / "xxs84_expected.fsle");
  ASSERT_EQ(inputs.size(), expected.size());
  ASSERT_GT(inputs.size(), 0u);

  ModelGraph g = build_mobilevit(mobilevit_xxs(84, 84));
  g.load_weights(random_weights(g, expected.attributes.at("weights_seed").get<std::uint64_t>()));
  const Shape shape = inputs.attributes.at("input_shape").get<Shape>();
  ASSERT_EQ(shape, g.input_shape());
  ASSERT_EQ(expected.dim, g.embedding_dim());

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor x(shape);
    std::ranges::copy(inputs.vector(i), x.data().begin());
    const Tensor y = g.forward(x);
    const auto want = expected.vector(i);
    for (std::size_t k = 0; k < want.size(); ++k) {
      const double tol = 1e-5 * std::max(1.0, std::abs(static_cast<double>(want[k])));
      ASSERT_NEAR(y.data()[k], want[k], tol) << "image " << i << " feature " << k;
    }
  }
}

TEST(Golden, EmbeddingsAreNotDegenerate) {
  const EmbeddingDataset expected = load_embeddings(kGolden / "xxs84_expected.fsle");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    double sq = 0;
    for (float v : expected.vector(i)) {
      ASSERT_TRUE(std::isfinite(v));
      sq += static_cast<double>(v) * v;
    }
    EXPECT_GT(sq, 1e-3);
  }
  double diff = 0;
  for (std::size_t k = 0; k < expected.dim; ++k) diff += std::abs(expected.vector(0)[k] - expected.vector(1)[k]);
  EXPECT_GT(diff, 1e-3);
}

}  // namespace
}  // namespace fsle
