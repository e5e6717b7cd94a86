#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fsle {

// Broad error classes. The CLI maps each one to a distinct exit code.
enum class ErrorKind {
  kInvalidArgument,
  kShapeMismatch,
  kInvalidHyperparameter,
  kNegativeVariance,
  kConfig,
  kUnloadedWeights,
  kResolutionMismatch,
  kFormat,
  kInsufficientData,
  kEmptyClass,
  kDivergence,
  kNonDifferentiable,
  kTrace,
  kEmptyWindow,
  kIo,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Binary container corruption classes; see docs/format.md.
enum class FormatErrorKind {
  kBadMagic,
  kUnsupportedVersion,
  kTruncated,
  kChecksumMismatch,
  kMalformedMetadata,
  kLayoutMismatch,
  kInvalidPayload,
  kTrailingData,
};

std::string_view to_string(FormatErrorKind kind);

class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, std::size_t byte_offset,
              const std::string& detail);

  FormatErrorKind format_kind() const noexcept { return format_kind_; }
  std::size_t byte_offset() const noexcept { return byte_offset_; }

 private:
  FormatErrorKind format_kind_;
  std::size_t byte_offset_;
};

enum class TraceErrorKind { kUnknownHeader, kMalformedRow, kNonMonotoneTimestamp };

std::string_view to_string(TraceErrorKind kind);

class TraceError : public Error {
 public:
  TraceError(TraceErrorKind kind, std::size_t line, const std::string& detail);

  TraceErrorKind trace_kind() const noexcept { return trace_kind_; }
  // 1-based line number in the CSV text.
  std::size_t line() const noexcept { return line_; }

 private:
  TraceErrorKind trace_kind_;
  std::size_t line_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, double loss);

  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace fsle
