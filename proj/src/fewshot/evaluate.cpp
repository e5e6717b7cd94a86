#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "fsle/activity.hpp"
#include "fsle/fewshot.hpp"
#include "fsle/rng.hpp"

namespace fsle {

double episode_accuracy(const Episode& episode, const ClassifierConfig& classifier) {
  if (episode.queries.empty()) {
    throw Error(ErrorKind::kInsufficientData, "episode has no queries");
  }
  std::vector<Prototype> prototypes = ncm_fit(episode.support, episode.classes);
  std::size_t correct = 0;
  if (classifier.transductive) {
    const SoftKmeansResult r = soft_kmeans(prototypes, episode.queries, classifier.soft_kmeans);
    for (std::size_t q = 0; q < episode.queries.size(); ++q) {
      correct += r.assignments[q] == episode.queries.labels[q];
    }
  } else {
    for (std::size_t q = 0; q < episode.queries.size(); ++q) {
      correct += ncm_classify(prototypes, episode.queries.vector(q)).class_id ==
                 episode.queries.labels[q];
    }
  }
  return static_cast<double>(correct) / static_cast<double>(episode.queries.size());
}

EvalReport evaluate(const EmbeddingDataset& dataset, const Protocol& protocol,
                    const ClassifierConfig& classifier, unsigned workers) {
  if (protocol.episodes < 1 || protocol.seeds < 1) {
    throw Error(ErrorKind::kInvalidHyperparameter, "episodes and seeds must be >= 1");
  }
  if (protocol.q_queries < 1) {
    throw Error(ErrorKind::kInvalidHyperparameter, "q_queries must be >= 1");
  }
  if (classifier.transductive) {
    // Surfaces invalid soft k-means settings before any worker starts.
    soft_kmeans(std::vector<Prototype>{{0, {0.0f}, 1}}, EmbeddingDataset(1),
                classifier.soft_kmeans);
  }

  EmbeddingDataset prepared;
  const EmbeddingDataset* data = &dataset;
  if (classifier.preprocess) {
    std::vector<float> base = classifier.base_mean;
    if (base.empty()) base.assign(dataset.dim, 0.0f);
    prepared = preprocess(dataset, base);
    data = &prepared;
  }
  const ClassIndex index(*data);
  // Validates the sampling preconditions once, on the caller's thread.
  sample_episode(*data, index, protocol.n_way, protocol.k_shot, protocol.q_queries, 0);

  EvalReport report;
  report.protocol = protocol;
  report.classifier = classifier;
  for (int s = 0; s < protocol.seeds; ++s) {
    report.seeds.push_back(derive_seed(protocol.root_seed, static_cast<std::uint64_t>(s)));
  }
  const std::size_t per_seed = static_cast<std::size_t>(protocol.episodes);
  const std::size_t total = per_seed * report.seeds.size();
  report.episode_accuracies.assign(total, 0.0);

  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, total));
  constexpr std::size_t kChunk = 64;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    const EngineActivity::Scope active;
    try {
      for (;;) {
        const std::size_t begin = next.fetch_add(kChunk);
        if (begin >= total) return;
        const std::size_t end = std::min(total, begin + kChunk);
        for (std::size_t i = begin; i < end; ++i) {
          const std::uint64_t seed = derive_seed(report.seeds[i / per_seed], i % per_seed);
          const Episode e = sample_episode(*data, index, protocol.n_way, protocol.k_shot,
                                           protocol.q_queries, seed);
          report.episode_accuracies[i] = episode_accuracy(e, classifier);
        }
      }
    } catch (...) {
      const std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next.store(total);
    }
  };
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
  }
  if (failure) std::rethrow_exception(failure);

  double grand = 0.0;
  for (std::size_t s = 0; s < report.seeds.size(); ++s) {
    double sum = 0.0;
    for (std::size_t e = 0; e < per_seed; ++e) sum += report.episode_accuracies[s * per_seed + e];
    report.per_seed_mean.push_back(sum / static_cast<double>(per_seed));
    grand += sum;
  }
  report.grand_mean = grand / static_cast<double>(total);
  if (total > 1) {
    double ss = 0.0;
    for (double a : report.episode_accuracies) ss += (a - report.grand_mean) * (a - report.grand_mean);
    report.std_dev = std::sqrt(ss / static_cast<double>(total - 1));
  }
  report.ci95_half_width = 1.96 * report.std_dev / std::sqrt(static_cast<double>(total));
  return report;
}

nlohmann::json to_json(const EvalReport& r) {
  const Protocol& p = r.protocol;
  const ClassifierConfig& c = r.classifier;
  return {
      {"protocol",
       {{"n_way", p.n_way},
        {"k_shot", p.k_shot},
        {"q_queries", p.q_queries},
        {"episodes_per_seed", p.episodes},
        {"seeds", p.seeds},
        {"root_seed", p.root_seed},
        {"episode_unit", "episode"}}},
      {"classifier",
       {{"preprocess", c.preprocess},
        {"base_mean_supplied", !c.base_mean.empty()},
        {"transductive", c.transductive},
        {"soft_kmeans",
         {{"iterations", c.soft_kmeans.iterations}, {"temperature", c.soft_kmeans.temperature}}}}},
      {"seeds", r.seeds},
      {"per_seed_mean", r.per_seed_mean},
      {"episodes_total", r.episode_accuracies.size()},
      {"grand_mean", r.grand_mean},
      {"std_dev", r.std_dev},
      {"ci95_half_width", r.ci95_half_width},
  };
}

}  // namespace fsle
