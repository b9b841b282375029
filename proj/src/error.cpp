#include "cgmmsep/error.hpp"

namespace cgmm {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInputTooShort: return "input too short";
    case ErrorKind::kConfigMismatch: return "config mismatch";
    case ErrorKind::kDimension: return "dimension error";
    case ErrorKind::kNumeric: return "numeric error";
    case ErrorKind::kInvalidConfig: return "invalid config";
    case ErrorKind::kIo: return "I/O error";
    case ErrorKind::kCheckpoint: return "checkpoint error";
    case ErrorKind::kDegenerateInput: return "degenerate input";
    case ErrorKind::kInvalidReference: return "invalid reference";
    case ErrorKind::kSingularDistance: return "singular distance";
  }
  return "error";
}

}  // namespace cgmm
