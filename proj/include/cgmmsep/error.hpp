#pragma once

#include <stdexcept>
#include <string>

namespace cgmm {

enum class ErrorKind {
  kInputTooShort,
  kConfigMismatch,
  kDimension,
  kNumeric,
  kInvalidConfig,
  kIo,
  kCheckpoint,
  kDegenerateInput,
  kInvalidReference,
  kSingularDistance,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace cgmm
