#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hpcrag {

enum class ErrorCode {
  // model gateway
  kTransportError,
  kBackendError,
  kEmptyInput,
  kContextOverflow,
  kScriptMiss,
  // corpus
  kPathNotFound,
  kUnreadableFile,
  kIoError,
  kSchemaVersionMismatch,
  // retrieval
  kDimensionMismatch,
  kZeroVector,
  kDuplicateId,
  // command registry / sandbox
  kParseError,
  kDuplicateName,
  kInvalidSpec,
  kNotInRegistry,
  kDisabled,
  kSpawnError,
  kTimeout,
  // evaluation
  kInsufficientChunks,
  kEmptySet,
  kMissingArtifact,
  // application
  kConfigError,
  kInvalidArgument,
};

std::string_view error_code_name(ErrorCode code) noexcept;

/// Every failure surfaced by the library is an Error carrying a code; the
/// message is human-readable and never contains credential material.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace hpcrag
