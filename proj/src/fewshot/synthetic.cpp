#include <cmath>

#include "fsle/fewshot.hpp"
#include "fsle/rng.hpp"

namespace fsle {

EmbeddingDataset make_synthetic_embeddings(const SyntheticEmbeddingConfig& c) {
  if (c.classes < 1 || c.per_class < 0 || c.dim == 0) {
    throw Error(ErrorKind::kInvalidArgument, "classes >= 1, per_class >= 0 and dim >= 1 required");
  }
  if (!(c.class_spread >= 0.0) || !(c.noise >= 0.0) || !std::isfinite(c.class_spread) ||
      !std::isfinite(c.noise)) {
    throw Error(ErrorKind::kInvalidArgument, "class_spread and noise must be finite and >= 0");
  }
  Rng center_rng(derive_seed(c.seed, 0));
  Rng item_rng(derive_seed(c.seed, 1));
  EmbeddingDataset d(c.dim);
  std::vector<double> center(c.dim);
  std::vector<float> x(c.dim);
  for (int k = 0; k < c.classes; ++k) {
    for (double& v : center) v = c.class_spread * center_rng.normal();
    for (int i = 0; i < c.per_class; ++i) {
      for (std::size_t j = 0; j < c.dim; ++j) {
        x[j] = static_cast<float>(center[j] + c.noise * item_rng.normal());
      }
      d.push_back(k, x);
    }
  }
  d.attributes = {{"generator", "gaussian_classes"},
                  {"classes", c.classes},
                  {"per_class", c.per_class},
                  {"class_spread", c.class_spread},
                  {"noise", c.noise},
                  {"seed", c.seed}};
  return d;
}

}  // namespace fsle
