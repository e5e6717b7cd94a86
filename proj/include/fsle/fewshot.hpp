#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsle/model_io.hpp"

namespace fsle {

// Centers by `base_mean` then scales to unit L2 norm. A vector that centers
// to exactly zero stays zero. `base_mean` is a base-split statistic supplied
// by the caller; it is never estimated from the episode.
std::vector<float> preprocess(std::span<const float> x, std::span<const float> base_mean);
void preprocess_inplace(std::span<float> x, std::span<const float> base_mean);
EmbeddingDataset preprocess(const EmbeddingDataset& dataset, std::span<const float> base_mean);

// Mean of every vector in the dataset, accumulated in double.
std::vector<float> dataset_mean(const EmbeddingDataset& dataset);

struct Prototype {
  std::int32_t class_id = 0;
  std::vector<float> vector;
  std::size_t support_count = 0;
};

// One prototype per class, sorted by class id. Each is the arithmetic mean of
// the class's support vectors summed in item order in double. When `classes`
// is non-empty every listed class must have support, otherwise kEmptyClass.
std::vector<Prototype> ncm_fit(const EmbeddingDataset& support,
                               std::span<const std::int32_t> classes = {});

struct Classification {
  std::int32_t class_id = 0;
  std::vector<double> distances;  // Euclidean, in prototype order
};

// Nearest prototype by Euclidean distance; exact ties go to the lowest class id.
Classification ncm_classify(std::span<const Prototype> prototypes, std::span<const float> query);

struct SoftKmeansConfig {
  int iterations = 10;
  double temperature = 1.0;
};

struct SoftKmeansResult {
  std::vector<Prototype> prototypes;
  // weights[q][c]: softmax over classes of -||q - c||^2 / temperature
  // against the returned prototypes.
  std::vector<std::vector<double>> weights;
  std::vector<std::int32_t> assignments;  // ncm_classify against the returned prototypes
};

// Transductive refinement. Each iteration re-estimates every prototype as
// (sum of its support vectors + sum_q w_qc q) / (support_count + sum_q w_qc)
// with the support labels held fixed. Zero iterations leaves the prototypes
// untouched, so assignments equal plain NCM.
SoftKmeansResult soft_kmeans(std::span<const Prototype> prototypes,
                             const EmbeddingDataset& queries, const SoftKmeansConfig& config);

// Item indices per class, sorted by class id; build once per dataset.
struct ClassIndex {
  std::vector<std::int32_t> class_ids;
  std::vector<std::vector<std::size_t>> items;

  explicit ClassIndex(const EmbeddingDataset& dataset);
};

struct Episode {
  int n_way = 0;
  int k_shot = 0;
  int q_queries = 0;
  EmbeddingDataset support;  // class-major, k_shot items per class
  EmbeddingDataset queries;  // class-major, q_queries items per class
  std::vector<std::int32_t> classes;  // in sampling order
  std::vector<std::size_t> support_items;  // dataset indices
  std::vector<std::size_t> query_items;
};

// Samples n_way classes without replacement, then k_shot + q_queries items
// per class without replacement (partial Fisher-Yates), all from one RNG
// seeded with `seed`. Every class must hold at least k_shot + q_queries items.
Episode sample_episode(const EmbeddingDataset& dataset, const ClassIndex& index, int n_way,
                       int k_shot, int q_queries, std::uint64_t seed);
Episode sample_episode(const EmbeddingDataset& dataset, int n_way, int k_shot, int q_queries,
                       std::uint64_t seed);

struct Protocol {
  int n_way = 5;
  int k_shot = 1;
  int q_queries = 15;
  int episodes = 10'000;
  int seeds = 5;
  std::uint64_t root_seed = 0;
};

struct ClassifierConfig {
  bool preprocess = false;
  std::vector<float> base_mean;  // zeros when empty and preprocess is on
  bool transductive = false;
  SoftKmeansConfig soft_kmeans;
};

struct EvalReport {
  Protocol protocol;
  ClassifierConfig classifier;
  std::vector<std::uint64_t> seeds;
  std::vector<double> per_seed_mean;
  double grand_mean = 0.0;
  double std_dev = 0.0;  // sample standard deviation of pooled episode accuracies
  double ci95_half_width = 0.0;  // 1.96 * std_dev / sqrt(pooled episodes)
  std::vector<double> episode_accuracies;  // pooled, seed-major; not serialized
};

// Run s uses seed derive_seed(root_seed, s); episode e of that run samples
// with derive_seed(seed_s, e). Episodes are spread over `workers` threads
// (0 = hardware concurrency) and reduced in index order, so the report does
// not depend on the worker count.
EvalReport evaluate(const EmbeddingDataset& dataset, const Protocol& protocol,
                    const ClassifierConfig& classifier, unsigned workers = 0);

// Accuracy of one episode under the classifier (vectors already preprocessed).
double episode_accuracy(const Episode& episode, const ClassifierConfig& classifier);

nlohmann::json to_json(const EvalReport& report);

// Isotropic Gaussian classes: centers ~ N(0, class_spread^2) per coordinate,
// items = center + N(0, noise^2). class_spread = 0 gives a chance-level
// dataset. Items are written class-major with labels 0 .. classes-1, and the
// settings are recorded in `attributes`.
struct SyntheticEmbeddingConfig {
  int classes = 20;
  int per_class = 100;
  std::size_t dim = 64;
  double class_spread = 1.0;
  double noise = 1.0;
  std::uint64_t seed = 0;
};

EmbeddingDataset make_synthetic_embeddings(const SyntheticEmbeddingConfig& config);

}  // namespace fsle
