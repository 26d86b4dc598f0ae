#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace owmmd {

enum class ErrorCode {
  DimensionMismatch,
  DomainError,
  NumericError,
  InvalidAxis,
  NonScalarLoss,
  NonPositiveBandwidth,
  BatchTooSmall,
  ZeroVector,
  FrozenViolation,
  NoTeacher,
  MissingGradient,
  EmptyBuffer,
  InvalidSpec,
  InvalidHyperParams,
  IncompleteMatrix,
  SingleTask,
  InvalidTask,
  EmptyInput,
  ConfigError,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::NumericError: return "NumericError";
    case ErrorCode::InvalidAxis: return "InvalidAxis";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::NonPositiveBandwidth: return "NonPositiveBandwidth";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::FrozenViolation: return "FrozenViolation";
    case ErrorCode::NoTeacher: return "NoTeacher";
    case ErrorCode::MissingGradient: return "MissingGradient";
    case ErrorCode::EmptyBuffer: return "EmptyBuffer";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::InvalidHyperParams: return "InvalidHyperParams";
    case ErrorCode::IncompleteMatrix: return "IncompleteMatrix";
    case ErrorCode::SingleTask: return "SingleTask";
    case ErrorCode::InvalidTask: return "InvalidTask";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace owmmd
