#pragma once

#include <stdexcept>
#include <string>

namespace dropwiper {

enum class ErrorCode {
  kFileNotFound,
  kUnsupportedFormat,
  kUnsupportedBitDepth,
  kCorruptHeader,
  kUnwritablePath,
  kShapeMismatch,
  kInvalidArgument,
  kOutOfRange,
  kNonFinite,
  kDivergence,
  kEmptyDataset,
  kBadCheckpoint,
};

const char* to_string(ErrorCode code);

// Every failure raised by the library carries a code so callers (and the
// CLI exit status) can distinguish causes without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace dropwiper
