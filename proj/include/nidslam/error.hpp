#pragma once

#include <stdexcept>
#include <string>

namespace nidslam {

// Each code maps to a distinct process exit status in the CLI.
enum class ErrorCode : int {
  kInvalidArgument = 2,
  kGeometry = 3,
  kIo = 4,
  kFormat = 5,
  kTruncated = 6,
  kNoAssociation = 7,
  kOutOfGrid = 8,
  kEmptyBatch = 9,
  kNonFiniteGradient = 10,
  kTrackingLost = 11,
  kInsufficientData = 12,
  kEmptySurface = 13,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  int exit_status() const noexcept { return static_cast<int>(code_); }

 private:
  ErrorCode code_;
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kGeometry: return "geometry";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kNoAssociation: return "no-association";
    case ErrorCode::kOutOfGrid: return "out-of-grid";
    case ErrorCode::kEmptyBatch: return "empty-batch";
    case ErrorCode::kNonFiniteGradient: return "non-finite-gradient";
    case ErrorCode::kTrackingLost: return "tracking-lost";
    case ErrorCode::kInsufficientData: return "insufficient-data";
    case ErrorCode::kEmptySurface: return "empty-surface";
  }
  return "unknown";
}

}  // namespace nidslam
