#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace topoens {

enum class ErrorKind {
  // I/O
  kMissingFile,
  kIoFailure,
  // Malformed or inconsistent input
  kMalformedManifest,
  kDuplicateModelId,
  kBadMagic,
  kTruncatedFile,
  kRowSumViolation,
  kInvariantViolation,
  kEntryOutOfRange,
  kDimensionMismatch,
  kShapeMismatch,
  kSubsetTooSmall,
  kNoCommonSamples,
  kEmptySample,
  kMisaligned,
  kDegenerateInput,
  kSizeOutOfRange,
  kInfeasibleSimilarity,
  kModelIdMismatch,
  kInvalidArgument,
};

constexpr std::string_view ToString(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kMissingFile: return "MissingFile";
    case ErrorKind::kIoFailure: return "IoFailure";
    case ErrorKind::kMalformedManifest: return "MalformedManifest";
    case ErrorKind::kDuplicateModelId: return "DuplicateModelId";
    case ErrorKind::kBadMagic: return "BadMagic";
    case ErrorKind::kTruncatedFile: return "TruncatedFile";
    case ErrorKind::kRowSumViolation: return "RowSumViolation";
    case ErrorKind::kInvariantViolation: return "InvariantViolation";
    case ErrorKind::kEntryOutOfRange: return "EntryOutOfRange";
    case ErrorKind::kDimensionMismatch: return "DimensionMismatch";
    case ErrorKind::kShapeMismatch: return "ShapeMismatch";
    case ErrorKind::kSubsetTooSmall: return "SubsetTooSmall";
    case ErrorKind::kNoCommonSamples: return "NoCommonSamples";
    case ErrorKind::kEmptySample: return "EmptySample";
    case ErrorKind::kMisaligned: return "Misaligned";
    case ErrorKind::kDegenerateInput: return "DegenerateInput";
    case ErrorKind::kSizeOutOfRange: return "SizeOutOfRange";
    case ErrorKind::kInfeasibleSimilarity: return "InfeasibleSimilarity";
    case ErrorKind::kModelIdMismatch: return "ModelIdMismatch";
    case ErrorKind::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

// True for failures of the environment (missing or unwritable files) as
// opposed to failures of the data itself.
constexpr bool IsIoError(ErrorKind kind) {
  return kind == ErrorKind::kMissingFile || kind == ErrorKind::kIoFailure;
}

// Every failure raised by the library carries a typed kind; the message is
// prefixed with the kind name so that CLI output is greppable.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string(ToString(kind)) + ": " + detail),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace topoens
