#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "fsle/fewshot.hpp"

namespace fsle {
namespace {

void check_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw Error(ErrorKind::kShapeMismatch, std::string(what) + " has dim " +
                                               std::to_string(got) + ", expected " +
                                               std::to_string(want));
  }
}

double squared_distance(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc;
}

std::size_t nearest(std::span<const Prototype> prototypes, std::span<const float> query,
                    std::vector<double>* distances) {
  std::size_t best = 0;
  double best_d2 = 0.0;
  for (std::size_t c = 0; c < prototypes.size(); ++c) {
    check_dim(prototypes[c].vector.size(), query.size(), "prototype");
    const double d2 = squared_distance(prototypes[c].vector, query);
    if (distances) distances->push_back(std::sqrt(d2));
    if (c == 0 || d2 < best_d2 ||
        (d2 == best_d2 && prototypes[c].class_id < prototypes[best].class_id)) {
      best = c;
      best_d2 = d2;
    }
  }
  return best;
}

std::vector<double> soft_weights(std::span<const Prototype> prototypes,
                                 std::span<const float> query, double temperature) {
  std::vector<double> w(prototypes.size());
  double max_logit = -INFINITY;
  for (std::size_t c = 0; c < prototypes.size(); ++c) {
    w[c] = -squared_distance(prototypes[c].vector, query) / temperature;
    max_logit = std::max(max_logit, w[c]);
  }
  double z = 0.0;
  for (double& v : w) z += (v = std::exp(v - max_logit));
  for (double& v : w) v /= z;
  return w;
}

}  // namespace

void preprocess_inplace(std::span<float> x, std::span<const float> base_mean) {
  check_dim(base_mean.size(), x.size(), "base mean");
  double norm2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] -= base_mean[i];
    norm2 += static_cast<double>(x[i]) * x[i];
  }
  if (norm2 == 0.0) return;
  const double inv = 1.0 / std::sqrt(norm2);
  for (float& v : x) v = static_cast<float>(v * inv);
}

std::vector<float> preprocess(std::span<const float> x, std::span<const float> base_mean) {
  std::vector<float> out(x.begin(), x.end());
  preprocess_inplace(out, base_mean);
  return out;
}

EmbeddingDataset preprocess(const EmbeddingDataset& dataset, std::span<const float> base_mean) {
  check_dim(base_mean.size(), dataset.dim, "base mean");
  EmbeddingDataset out = dataset;
  for (std::size_t i = 0; i < out.size(); ++i) preprocess_inplace(out.vector(i), base_mean);
  return out;
}

std::vector<float> dataset_mean(const EmbeddingDataset& dataset) {
  if (dataset.empty()) throw Error(ErrorKind::kInsufficientData, "dataset is empty");
  std::vector<double> sum(dataset.dim, 0.0);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto v = dataset.vector(i);
    for (std::size_t d = 0; d < dataset.dim; ++d) sum[d] += v[d];
  }
  std::vector<float> mean(dataset.dim);
  for (std::size_t d = 0; d < dataset.dim; ++d) {
    mean[d] = static_cast<float>(sum[d] / static_cast<double>(dataset.size()));
  }
  return mean;
}

std::vector<Prototype> ncm_fit(const EmbeddingDataset& support,
                               std::span<const std::int32_t> classes) {
  if (support.empty()) throw Error(ErrorKind::kEmptyClass, "support set is empty");
  struct Acc {
    std::vector<double> sum;
    std::size_t count = 0;
  };
  std::map<std::int32_t, Acc> by_class;
  for (std::size_t i = 0; i < support.size(); ++i) {
    Acc& a = by_class[support.labels[i]];
    if (a.sum.empty()) a.sum.assign(support.dim, 0.0);
    const auto v = support.vector(i);
    for (std::size_t d = 0; d < support.dim; ++d) a.sum[d] += v[d];
    ++a.count;
  }
  for (std::int32_t c : classes) {
    if (!by_class.contains(c)) {
      throw Error(ErrorKind::kEmptyClass, "class " + std::to_string(c) + " has no support");
    }
  }
  std::vector<Prototype> out;
  out.reserve(by_class.size());
  for (const auto& [id, a] : by_class) {
    Prototype p{id, std::vector<float>(support.dim), a.count};
    for (std::size_t d = 0; d < support.dim; ++d) {
      p.vector[d] = static_cast<float>(a.sum[d] / static_cast<double>(a.count));
    }
    out.push_back(std::move(p));
  }
  return out;
}

Classification ncm_classify(std::span<const Prototype> prototypes, std::span<const float> query) {
  if (prototypes.empty()) throw Error(ErrorKind::kInvalidArgument, "no prototypes");
  Classification r;
  r.distances.reserve(prototypes.size());
  r.class_id = prototypes[nearest(prototypes, query, &r.distances)].class_id;
  return r;
}

SoftKmeansResult soft_kmeans(std::span<const Prototype> prototypes,
                             const EmbeddingDataset& queries, const SoftKmeansConfig& config) {
  if (config.iterations < 0) {
    throw Error(ErrorKind::kInvalidHyperparameter, "iterations must be >= 0");
  }
  if (!(config.temperature > 0.0) || !std::isfinite(config.temperature)) {
    throw Error(ErrorKind::kInvalidHyperparameter, "temperature must be positive and finite");
  }
  if (prototypes.empty()) throw Error(ErrorKind::kInvalidArgument, "no prototypes");
  const std::size_t dim = prototypes[0].vector.size();
  for (const Prototype& p : prototypes) check_dim(p.vector.size(), dim, "prototype");
  if (!queries.empty()) check_dim(queries.dim, dim, "query");

  std::vector<std::vector<double>> support_sum(prototypes.size());
  for (std::size_t c = 0; c < prototypes.size(); ++c) {
    support_sum[c].resize(dim);
    for (std::size_t d = 0; d < dim; ++d) {
      support_sum[c][d] = static_cast<double>(prototypes[c].support_count) * prototypes[c].vector[d];
    }
  }

  SoftKmeansResult r;
  r.prototypes.assign(prototypes.begin(), prototypes.end());
  for (int it = 0; it < config.iterations; ++it) {
    std::vector<std::vector<double>> sum = support_sum;
    std::vector<double> mass(prototypes.size());
    for (std::size_t c = 0; c < prototypes.size(); ++c) {
      mass[c] = static_cast<double>(prototypes[c].support_count);
    }
    for (std::size_t q = 0; q < queries.size(); ++q) {
      const auto v = queries.vector(q);
      const std::vector<double> w = soft_weights(r.prototypes, v, config.temperature);
      for (std::size_t c = 0; c < w.size(); ++c) {
        mass[c] += w[c];
        for (std::size_t d = 0; d < dim; ++d) sum[c][d] += w[c] * v[d];
      }
    }
    for (std::size_t c = 0; c < prototypes.size(); ++c) {
      if (mass[c] <= 0.0) continue;
      for (std::size_t d = 0; d < dim; ++d) {
        r.prototypes[c].vector[d] = static_cast<float>(sum[c][d] / mass[c]);
      }
    }
  }
  r.weights.reserve(queries.size());
  r.assignments.reserve(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto v = queries.vector(q);
    r.weights.push_back(soft_weights(r.prototypes, v, config.temperature));
    r.assignments.push_back(r.prototypes[nearest(r.prototypes, v, nullptr)].class_id);
  }
  return r;
}

}  // namespace fsle
