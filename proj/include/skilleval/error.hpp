#pragma once

#include <stdexcept>
#include <string>

namespace skilleval {

enum class ErrorCode {
  IoError,
  MalformedRow,
  EmptyFile,
  DuplicateTrial,
  InvalidTrial,
  InvalidConfig,
  ChannelMismatch,
  LengthTooShort,
  HeadMismatch,
  ShapeMismatch,
  TooFewTrials,
  LabelMismatch,
  EmptyDataset,
  EmptyInput,
  VersionMismatch,
  CorruptModel,
  IndexOutOfRange,
  TraceMismatch,
  LengthMismatch,
  SingleSuperTrial,
  TooShort,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::EmptyFile: return "EmptyFile";
    case ErrorCode::DuplicateTrial: return "DuplicateTrial";
    case ErrorCode::InvalidTrial: return "InvalidTrial";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ChannelMismatch: return "ChannelMismatch";
    case ErrorCode::LengthTooShort: return "LengthTooShort";
    case ErrorCode::HeadMismatch: return "HeadMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::TooFewTrials: return "TooFewTrials";
    case ErrorCode::LabelMismatch: return "LabelMismatch";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptModel: return "CorruptModel";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::TraceMismatch: return "TraceMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::SingleSuperTrial: return "SingleSuperTrial";
    case ErrorCode::TooShort: return "TooShort";
  }
  return "UnknownError";
}

/// Library-wide exception carrying a machine-checkable error code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace skilleval
