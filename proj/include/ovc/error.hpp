#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ovc {

enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kEncoderUnavailable,
  kConfigInvalid,
  kCacheMiss,
  kEmptyCache,
  kMvnMissing,
  kFingerprintMismatch,
  kSeedMismatch,
  kMagicMismatch,
  kVersionUnsupported,
  kTruncation,
  kChecksumMismatch,
  kCorruptRecord,
  kInsufficientSamples,
  kNonPsd,
  kIo,
};

std::string_view to_string(ErrorCode code);

// Every failure in the engine surfaces as this exception; callers branch on
// code() rather than on message text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

// Literal messages stay unconverted until a check fails.
inline void require(bool cond, ErrorCode code, const char* what) {
  if (!cond) fail(code, what);
}

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kDimensionMismatch: return "dimension-mismatch";
    case ErrorCode::kEncoderUnavailable: return "encoder-unavailable";
    case ErrorCode::kConfigInvalid: return "config-invalid";
    case ErrorCode::kCacheMiss: return "cache-miss";
    case ErrorCode::kEmptyCache: return "empty-cache";
    case ErrorCode::kMvnMissing: return "mvn-missing";
    case ErrorCode::kFingerprintMismatch: return "fingerprint-mismatch";
    case ErrorCode::kSeedMismatch: return "seed-mismatch";
    case ErrorCode::kMagicMismatch: return "magic-mismatch";
    case ErrorCode::kVersionUnsupported: return "version-unsupported";
    case ErrorCode::kTruncation: return "truncation";
    case ErrorCode::kChecksumMismatch: return "checksum-mismatch";
    case ErrorCode::kCorruptRecord: return "corrupt-record";
    case ErrorCode::kInsufficientSamples: return "insufficient-samples";
    case ErrorCode::kNonPsd: return "non-psd";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

}  // namespace ovc
