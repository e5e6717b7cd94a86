#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsle/tensor.hpp"

// Binary containers for weight bundles (FSLW) and embedding datasets (FSLE).
// Byte layout is specified in docs/format.md.
namespace fsle {

inline constexpr int kFormatVersion = 1;
inline constexpr std::size_t kPayloadAlignment = 64;

using Bytes = std::vector<std::byte>;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct WeightBundle {
  int format_version = kFormatVersion;
  // Architecture document (ArchConfig or student spec); null when absent.
  nlohmann::json arch;
  std::vector<NamedTensor> tensors;

  const Tensor* find(std::string_view name) const;
};

// Labeled fixed-width float vectors. `attributes` is free-form metadata
// (generator parameters, preprocessing used at export, input shapes).
struct EmbeddingDataset {
  std::size_t dim = 0;
  std::vector<std::int32_t> labels;
  std::vector<float> vectors;  // row-major [size(), dim]
  nlohmann::json attributes = nlohmann::json::object();

  EmbeddingDataset() = default;
  explicit EmbeddingDataset(std::size_t d) : dim(d) {}

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  std::span<const float> vector(std::size_t i) const {
    return std::span<const float>(vectors).subspan(i * dim, dim);
  }
  std::span<float> vector(std::size_t i) {
    return std::span<float>(vectors).subspan(i * dim, dim);
  }
  void push_back(std::int32_t label, std::span<const float> v);
};

Bytes write_bundle(const WeightBundle& bundle);
WeightBundle read_bundle(std::span<const std::byte> bytes);

Bytes write_embeddings(const EmbeddingDataset& dataset);
EmbeddingDataset read_embeddings(std::span<const std::byte> bytes);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes);

inline WeightBundle load_bundle(const std::filesystem::path& path) {
  return read_bundle(read_file(path));
}
inline void save_bundle(const std::filesystem::path& path, const WeightBundle& b) {
  write_file(path, write_bundle(b));
}
inline EmbeddingDataset load_embeddings(const std::filesystem::path& path) {
  return read_embeddings(read_file(path));
}
inline void save_embeddings(const std::filesystem::path& path, const EmbeddingDataset& d) {
  write_file(path, write_embeddings(d));
}

}  // namespace fsle
