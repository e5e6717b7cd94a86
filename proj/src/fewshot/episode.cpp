#include <map>
#include <string>

#include "fsle/fewshot.hpp"
#include "fsle/rng.hpp"

namespace fsle {
namespace {

void check_counts(const ClassIndex& index, int n_way, int k_shot, int q_queries) {
  if (n_way < 1 || k_shot < 1 || q_queries < 0) {
    throw Error(ErrorKind::kInvalidHyperparameter,
                "episode needs n_way >= 1, k_shot >= 1, q_queries >= 0");
  }
  if (index.class_ids.size() < static_cast<std::size_t>(n_way)) {
    throw Error(ErrorKind::kInsufficientData,
                "dataset has " + std::to_string(index.class_ids.size()) +
                    " classes, episode needs " + std::to_string(n_way));
  }
  const auto need = static_cast<std::size_t>(k_shot + q_queries);
  for (std::size_t c = 0; c < index.class_ids.size(); ++c) {
    if (index.items[c].size() < need) {
      throw Error(ErrorKind::kInsufficientData,
                  "class " + std::to_string(index.class_ids[c]) + " has " +
                      std::to_string(index.items[c].size()) + " items, episode needs " +
                      std::to_string(need));
    }
  }
}

// First `count` entries of `pool` become a uniform sample without replacement.
template <typename T>
void partial_shuffle(std::vector<T>& pool, std::size_t count, Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(pool[i], pool[i + rng.uniform_index(pool.size() - i)]);
  }
}

}  // namespace

ClassIndex::ClassIndex(const EmbeddingDataset& dataset) {
  std::map<std::int32_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < dataset.size(); ++i) by_class[dataset.labels[i]].push_back(i);
  for (auto& [id, items_of] : by_class) {
    class_ids.push_back(id);
    items.push_back(std::move(items_of));
  }
}

Episode sample_episode(const EmbeddingDataset& dataset, const ClassIndex& index, int n_way,
                       int k_shot, int q_queries, std::uint64_t seed) {
  check_counts(index, n_way, k_shot, q_queries);
  Rng rng(seed);
  std::vector<std::size_t> classes(index.class_ids.size());
  for (std::size_t c = 0; c < classes.size(); ++c) classes[c] = c;
  partial_shuffle(classes, static_cast<std::size_t>(n_way), rng);

  Episode e;
  e.n_way = n_way;
  e.k_shot = k_shot;
  e.q_queries = q_queries;
  e.support = EmbeddingDataset(dataset.dim);
  e.queries = EmbeddingDataset(dataset.dim);
  e.support.attributes = e.queries.attributes = nlohmann::json::object();
  const auto k = static_cast<std::size_t>(k_shot);
  const auto need = k + static_cast<std::size_t>(q_queries);
  for (int w = 0; w < n_way; ++w) {
    const std::size_t c = classes[w];
    const std::int32_t label = index.class_ids[c];
    e.classes.push_back(label);
    std::vector<std::size_t> pool = index.items[c];
    partial_shuffle(pool, need, rng);
    for (std::size_t j = 0; j < need; ++j) {
      const std::size_t item = pool[j];
      if (j < k) {
        e.support.push_back(label, dataset.vector(item));
        e.support_items.push_back(item);
      } else {
        e.queries.push_back(label, dataset.vector(item));
        e.query_items.push_back(item);
      }
    }
  }
  return e;
}

Episode sample_episode(const EmbeddingDataset& dataset, int n_way, int k_shot, int q_queries,
                       std::uint64_t seed) {
  return sample_episode(dataset, ClassIndex(dataset), n_way, k_shot, q_queries, seed);
}

}  // namespace fsle
