#include "fsle/error.hpp"

#include <sstream>

namespace fsle {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kShapeMismatch: return "shape-mismatch";
    case ErrorKind::kInvalidHyperparameter: return "invalid-hyperparameter";
    case ErrorKind::kNegativeVariance: return "negative-variance";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kUnloadedWeights: return "unloaded-weights";
    case ErrorKind::kResolutionMismatch: return "resolution-mismatch";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kInsufficientData: return "insufficient-data";
    case ErrorKind::kEmptyClass: return "empty-class";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kNonDifferentiable: return "non-differentiable-op";
    case ErrorKind::kTrace: return "trace";
    case ErrorKind::kEmptyWindow: return "empty-window";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

std::string_view to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::kBadMagic: return "bad-magic";
    case FormatErrorKind::kUnsupportedVersion: return "version-unsupported";
    case FormatErrorKind::kTruncated: return "truncated-payload";
    case FormatErrorKind::kChecksumMismatch: return "checksum-mismatch";
    case FormatErrorKind::kMalformedMetadata: return "malformed-metadata";
    case FormatErrorKind::kLayoutMismatch: return "shape-offset-inconsistency";
    case FormatErrorKind::kInvalidPayload: return "invalid-payload";
    case FormatErrorKind::kTrailingData: return "trailing-data";
  }
  return "unknown";
}

std::string_view to_string(TraceErrorKind kind) {
  switch (kind) {
    case TraceErrorKind::kUnknownHeader: return "unknown-header";
    case TraceErrorKind::kMalformedRow: return "malformed-row";
    case TraceErrorKind::kNonMonotoneTimestamp: return "non-monotone-timestamp";
  }
  return "unknown";
}

namespace {

std::string format_message(FormatErrorKind kind, std::size_t offset,
                           const std::string& detail) {
  std::ostringstream os;
  os << to_string(kind) << " at byte " << offset << ": " << detail;
  return os.str();
}

std::string trace_message(TraceErrorKind kind, std::size_t line,
                          const std::string& detail) {
  std::ostringstream os;
  os << to_string(kind) << " at line " << line << ": " << detail;
  return os.str();
}

}  // namespace

FormatError::FormatError(FormatErrorKind kind, std::size_t byte_offset,
                         const std::string& detail)
    : Error(ErrorKind::kFormat, format_message(kind, byte_offset, detail)),
      format_kind_(kind),
      byte_offset_(byte_offset) {}

TraceError::TraceError(TraceErrorKind kind, std::size_t line,
                       const std::string& detail)
    : Error(ErrorKind::kTrace, trace_message(kind, line, detail)),
      trace_kind_(kind),
      line_(line) {}

DivergenceError::DivergenceError(int epoch, double loss)
    : Error(ErrorKind::kDivergence,
            "loss became non-finite (" + std::to_string(loss) + ") in epoch " +
                std::to_string(epoch)),
      epoch_(epoch) {}

}  // namespace fsle
