#include "fsle/model_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <string>

#include <zlib.h>

#include "fsle/error.hpp"

namespace fsle {
namespace {

constexpr std::size_t kMagicSize = 8;
constexpr std::size_t kLengthOffset = 8;
constexpr std::size_t kCrcOffset = 16;
constexpr std::size_t kMetadataOffset = 20;
constexpr std::string_view kWeightsMagic = "FSLW0001";
constexpr std::string_view kEmbeddingsMagic = "FSLE0001";

std::size_t align_up(std::size_t v) {
  return (v + kPayloadAlignment - 1) / kPayloadAlignment * kPayloadAlignment;
}

template <typename U>
U byteswap_if_big(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out = static_cast<U>((out << 8) | ((v >> (8 * i)) & 0xFF));
    }
    return out;
  }
  return v;
}

template <typename U>
void put_le(Bytes& out, U v) {
  v = byteswap_if_big(v);
  const auto* p = reinterpret_cast<const std::byte*>(&v);
  out.insert(out.end(), p, p + sizeof(U));
}

template <typename U>
U get_le(std::span<const std::byte> bytes, std::size_t offset) {
  U v;
  std::memcpy(&v, bytes.data() + offset, sizeof(U));
  return byteswap_if_big(v);
}

void put_floats(Bytes& out, std::span<const float> values) {
  for (float f : values) put_le(out, std::bit_cast<std::uint32_t>(f));
}

void get_floats(std::span<const std::byte> bytes, std::size_t offset, std::span<float> dst) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(dst.data(), bytes.data() + offset, dst.size() * sizeof(float));
  } else {
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, offset + 4 * i));
    }
  }
}

std::uint32_t crc_of(std::span<const std::byte> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(
        std::min<std::size_t>(bytes.size() - done, std::numeric_limits<uInt>::max()));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + done), chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

// Writes magic, metadata and alignment padding; returns the buffer with the
// payload start at its end.
Bytes write_header(std::string_view magic, const nlohmann::json& metadata) {
  const std::string text = metadata.dump();
  const auto* meta = reinterpret_cast<const std::byte*>(text.data());
  Bytes out;
  out.reserve(align_up(kMetadataOffset + text.size()));
  const auto* m = reinterpret_cast<const std::byte*>(magic.data());
  out.insert(out.end(), m, m + kMagicSize);
  put_le<std::uint64_t>(out, text.size());
  put_le<std::uint32_t>(out, crc_of({meta, text.size()}));
  out.insert(out.end(), meta, meta + text.size());
  out.resize(align_up(out.size()), std::byte{0});
  return out;
}

struct Header {
  nlohmann::json metadata;
  std::size_t payload_start = 0;
};

Header read_header(std::span<const std::byte> bytes, std::string_view magic) {
  if (bytes.size() < kMagicSize) {
    throw FormatError(FormatErrorKind::kTruncated, bytes.size(), "file shorter than magic");
  }
  const std::string_view found(reinterpret_cast<const char*>(bytes.data()), kMagicSize);
  if (found.substr(0, 4) != magic.substr(0, 4)) {
    throw FormatError(FormatErrorKind::kBadMagic, 0,
                      "expected magic '" + std::string(magic) + "'");
  }
  if (found.substr(4) != magic.substr(4)) {
    throw FormatError(FormatErrorKind::kUnsupportedVersion, 4,
                      "container version '" + std::string(found.substr(4)) +
                          "' is not supported");
  }
  if (bytes.size() < kMetadataOffset) {
    throw FormatError(FormatErrorKind::kTruncated, bytes.size(), "header truncated");
  }
  const auto length = get_le<std::uint64_t>(bytes, kLengthOffset);
  if (length > bytes.size() - kMetadataOffset) {
    throw FormatError(FormatErrorKind::kTruncated, bytes.size(),
                      "metadata length " + std::to_string(length) + " exceeds file");
  }
  const auto meta = bytes.subspan(kMetadataOffset, length);
  if (crc_of(meta) != get_le<std::uint32_t>(bytes, kCrcOffset)) {
    throw FormatError(FormatErrorKind::kChecksumMismatch, kCrcOffset,
                      "metadata checksum does not match");
  }
  const std::size_t payload_start = align_up(kMetadataOffset + length);
  if (payload_start > bytes.size()) {
    throw FormatError(FormatErrorKind::kTruncated, bytes.size(), "header padding truncated");
  }
  for (std::size_t i = kMetadataOffset + length; i < payload_start; ++i) {
    if (bytes[i] != std::byte{0}) {
      throw FormatError(FormatErrorKind::kMalformedMetadata, i, "non-zero header padding");
    }
  }
  Header h;
  h.payload_start = payload_start;
  const auto* text = reinterpret_cast<const char*>(meta.data());
  try {
    h.metadata = nlohmann::json::parse(text, text + meta.size());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(FormatErrorKind::kMalformedMetadata, kMetadataOffset + e.byte,
                      "metadata is not valid JSON");
  }
  if (!h.metadata.is_object()) {
    throw FormatError(FormatErrorKind::kMalformedMetadata, kMetadataOffset,
                      "metadata must be a JSON object");
  }
  return h;
}

[[noreturn]] void malformed(const std::string& what) {
  throw FormatError(FormatErrorKind::kMalformedMetadata, kMetadataOffset, what);
}

std::uint64_t get_count(const nlohmann::json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_number_unsigned()) {
    malformed(std::string("field '") + key + "' must be a non-negative integer");
  }
  return it->get<std::uint64_t>();
}

void check_version(const nlohmann::json& meta, std::string_view kind) {
  const auto v = meta.find("format_version");
  if (v == meta.end() || !v->is_number_integer()) malformed("missing format_version");
  if (v->get<std::int64_t>() != kFormatVersion) {
    throw FormatError(FormatErrorKind::kUnsupportedVersion, kMetadataOffset,
                      "format_version " + v->dump() + " is not supported");
  }
  const auto k = meta.find("kind");
  if (k == meta.end() || !k->is_string() || k->get<std::string>() != kind) {
    malformed("kind must be '" + std::string(kind) + "'");
  }
}

void check_payload_extent(std::span<const std::byte> bytes, std::size_t start,
                          std::uint64_t payload_bytes) {
  const std::size_t available = bytes.size() - start;
  if (payload_bytes > available) {
    throw FormatError(FormatErrorKind::kTruncated, bytes.size(),
                      "payload declares " + std::to_string(payload_bytes) +
                          " bytes, file has " + std::to_string(available));
  }
  if (payload_bytes < available) {
    throw FormatError(FormatErrorKind::kTrailingData, start + payload_bytes,
                      std::to_string(available - payload_bytes) +
                          " unexpected bytes after payload");
  }
}

}  // namespace

const Tensor* WeightBundle::find(std::string_view name) const {
  for (const NamedTensor& t : tensors) {
    if (t.name == name) return &t.tensor;
  }
  return nullptr;
}

void EmbeddingDataset::push_back(std::int32_t label, std::span<const float> v) {
  if (v.size() != dim) {
    throw Error(ErrorKind::kShapeMismatch, "embedding has " + std::to_string(v.size()) +
                                               " values, dataset dim is " +
                                               std::to_string(dim));
  }
  if (label < 0) throw Error(ErrorKind::kInvalidArgument, "labels must be non-negative");
  labels.push_back(label);
  vectors.insert(vectors.end(), v.begin(), v.end());
}

Bytes write_bundle(const WeightBundle& bundle) {
  if (bundle.format_version != kFormatVersion) {
    throw Error(ErrorKind::kInvalidArgument, "unsupported bundle format_version");
  }
  nlohmann::json tensors = nlohmann::json::array();
  std::set<std::string> names;
  std::uint64_t offset = 0;
  for (const NamedTensor& t : bundle.tensors) {
    if (t.tensor.empty()) {
      throw Error(ErrorKind::kInvalidArgument, "tensor '" + t.name + "' is empty");
    }
    if (!names.insert(t.name).second) {
      throw Error(ErrorKind::kInvalidArgument, "duplicate tensor name '" + t.name + "'");
    }
    tensors.push_back({{"name", t.name}, {"shape", t.tensor.shape()}, {"offset", offset}});
    offset += 4 * t.tensor.size();
  }
  const nlohmann::json metadata = {{"format_version", kFormatVersion},
                                   {"kind", "weights"},
                                   {"arch", bundle.arch},
                                   {"payload_bytes", offset},
                                   {"tensors", std::move(tensors)}};
  Bytes out = write_header(kWeightsMagic, metadata);
  out.reserve(out.size() + offset);
  for (const NamedTensor& t : bundle.tensors) put_floats(out, t.tensor.data());
  return out;
}

WeightBundle read_bundle(std::span<const std::byte> bytes) {
  const Header header = read_header(bytes, kWeightsMagic);
  const nlohmann::json& meta = header.metadata;
  check_version(meta, "weights");
  const std::uint64_t payload_bytes = get_count(meta, "payload_bytes");
  const auto jt = meta.find("tensors");
  if (jt == meta.end() || !jt->is_array()) malformed("missing tensor index");

  WeightBundle bundle;
  bundle.arch = meta.contains("arch") ? meta["arch"] : nlohmann::json();
  std::set<std::string> names;
  std::uint64_t expected_offset = 0;
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  for (const auto& t : *jt) {
    if (!t.is_object() || !t.contains("name") || !t["name"].is_string()) {
      malformed("tensor entry needs a string name");
    }
    Entry e{t["name"].get<std::string>(), {}, 0};
    if (!names.insert(e.name).second) malformed("duplicate tensor name '" + e.name + "'");
    const auto shape = t.find("shape");
    if (shape == t.end() || !shape->is_array() || shape->empty()) {
      malformed("tensor '" + e.name + "' needs a non-empty shape");
    }
    std::uint64_t count = 1;
    for (const auto& d : *shape) {
      if (!d.is_number_unsigned() || d.get<std::uint64_t>() == 0) {
        malformed("tensor '" + e.name + "' has a non-positive dimension");
      }
      const auto dim = d.get<std::uint64_t>();
      if (count > payload_bytes / dim) {
        throw FormatError(FormatErrorKind::kLayoutMismatch, header.payload_start,
                          "tensor '" + e.name + "' exceeds declared payload");
      }
      count *= dim;
      e.shape.push_back(static_cast<std::size_t>(dim));
    }
    e.offset = get_count(t, "offset");
    if (e.offset != expected_offset) {
      throw FormatError(FormatErrorKind::kLayoutMismatch, header.payload_start + e.offset,
                        "tensor '" + e.name + "' declared at offset " +
                            std::to_string(e.offset) + ", expected " +
                            std::to_string(expected_offset));
    }
    if (count > (payload_bytes - expected_offset) / 4) {
      throw FormatError(FormatErrorKind::kLayoutMismatch, header.payload_start + e.offset,
                        "tensor '" + e.name + "' extends past declared payload");
    }
    expected_offset += 4 * count;
    entries.push_back(std::move(e));
  }
  if (expected_offset != payload_bytes) {
    throw FormatError(FormatErrorKind::kLayoutMismatch,
                      header.payload_start + expected_offset,
                      "tensor sizes sum to " + std::to_string(expected_offset) +
                          " bytes, payload declares " + std::to_string(payload_bytes));
  }
  check_payload_extent(bytes, header.payload_start, payload_bytes);

  bundle.tensors.reserve(entries.size());
  for (Entry& e : entries) {
    Tensor t(std::move(e.shape));
    get_floats(bytes, header.payload_start + e.offset, t.data());
    bundle.tensors.push_back({std::move(e.name), std::move(t)});
  }
  return bundle;
}

Bytes write_embeddings(const EmbeddingDataset& d) {
  const std::size_t n = d.size();
  if (d.vectors.size() != n * d.dim) {
    throw Error(ErrorKind::kShapeMismatch, "embedding storage does not match dim * count");
  }
  if (n > 0 && d.dim == 0) {
    throw Error(ErrorKind::kInvalidArgument, "non-empty dataset needs dim >= 1");
  }
  for (std::int32_t label : d.labels) {
    if (label < 0) throw Error(ErrorKind::kInvalidArgument, "labels must be non-negative");
  }
  const std::uint64_t vectors_offset = align_up(4 * n);
  const std::uint64_t payload_bytes = vectors_offset + 4 * n * d.dim;
  const nlohmann::json metadata = {
      {"format_version", kFormatVersion}, {"kind", "embeddings"},
      {"dim", d.dim},                     {"count", n},
      {"labels_offset", 0},               {"vectors_offset", vectors_offset},
      {"payload_bytes", payload_bytes},   {"attributes", d.attributes}};
  Bytes out = write_header(kEmbeddingsMagic, metadata);
  const std::size_t start = out.size();
  out.reserve(start + payload_bytes);
  for (std::int32_t label : d.labels) put_le(out, static_cast<std::uint32_t>(label));
  out.resize(start + vectors_offset, std::byte{0});
  put_floats(out, d.vectors);
  return out;
}

EmbeddingDataset read_embeddings(std::span<const std::byte> bytes) {
  const Header header = read_header(bytes, kEmbeddingsMagic);
  const nlohmann::json& meta = header.metadata;
  check_version(meta, "embeddings");
  const std::uint64_t dim = get_count(meta, "dim");
  const std::uint64_t count = get_count(meta, "count");
  const std::uint64_t labels_offset = get_count(meta, "labels_offset");
  const std::uint64_t vectors_offset = get_count(meta, "vectors_offset");
  const std::uint64_t payload_bytes = get_count(meta, "payload_bytes");
  const std::size_t start = header.payload_start;

  if (count > 0 && dim == 0) malformed("non-empty dataset needs dim >= 1");
  if (count > bytes.size() || (dim > 0 && count > 0 && dim > bytes.size() / count)) {
    throw FormatError(FormatErrorKind::kLayoutMismatch, start,
                      "declared size exceeds the file");
  }
  if (labels_offset != 0) {
    throw FormatError(FormatErrorKind::kLayoutMismatch, start,
                      "labels must start at payload offset 0");
  }
  if (vectors_offset != align_up(4 * count)) {
    throw FormatError(FormatErrorKind::kLayoutMismatch, start + vectors_offset,
                      "vectors_offset " + std::to_string(vectors_offset) + ", expected " +
                          std::to_string(align_up(4 * count)));
  }
  if (payload_bytes != vectors_offset + 4 * count * dim) {
    throw FormatError(FormatErrorKind::kLayoutMismatch, start + vectors_offset,
                      "payload_bytes inconsistent with dim and count");
  }
  check_payload_extent(bytes, start, payload_bytes);

  EmbeddingDataset d(static_cast<std::size_t>(dim));
  if (meta.contains("attributes")) {
    if (!meta["attributes"].is_object()) malformed("attributes must be an object");
    d.attributes = meta["attributes"];
  }
  d.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto raw = get_le<std::uint32_t>(bytes, start + 4 * i);
    if (raw > static_cast<std::uint32_t>(std::numeric_limits<std::int32_t>::max())) {
      throw FormatError(FormatErrorKind::kInvalidPayload, start + 4 * i,
                        "negative label");
    }
    d.labels[i] = static_cast<std::int32_t>(raw);
  }
  for (std::size_t i = start + 4 * count; i < start + vectors_offset; ++i) {
    if (bytes[i] != std::byte{0}) {
      throw FormatError(FormatErrorKind::kInvalidPayload, i, "non-zero payload padding");
    }
  }
  d.vectors.resize(count * dim);
  get_floats(bytes, start + vectors_offset, d.vectors);
  return d;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path.string() + "'");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  Bytes bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw Error(ErrorKind::kIo, "failed reading '" + path.string() + "'");
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot create '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "failed writing '" + path.string() + "'");
}

}  // namespace fsle
