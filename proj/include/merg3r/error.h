#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace merg3r {

enum class ErrorCode {
  kInvalidParameter,
  kInvalidDepth,
  kInvalidSimilarity,
  kInvalidInput,
  kNotFound,
  kSchemaViolation,
  kDataCorruption,
  kUnsupportedVersion,
  kNoOverlap,
  kInsufficientCorrespondences,
  kDegenerateGeometry,
  kDivergence,
  kGenerationFailure,
};

std::string_view ErrorCodeName(ErrorCode code);

// All recoverable failures in the library are reported through this type.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace merg3r
