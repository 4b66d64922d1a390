#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace solarmlr {

enum class ErrorCode {
  DimensionMismatch,
  NonFinite,
  InvalidArgument,
  ZeroColumn,
  OutOfOrderColumn,
  RankDeficient,
  NoConvergence,
  ZeroCoefficients,
  InsufficientData,
  MissingSeries,
  StaleCoefficients,
  LengthMismatch,
  TooFewPoints,
  SpanMismatch,
  Parse,
  Validation,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ZeroColumn: return "ZeroColumn";
    case ErrorCode::OutOfOrderColumn: return "OutOfOrderColumn";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::ZeroCoefficients: return "ZeroCoefficients";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::MissingSeries: return "MissingSeries";
    case ErrorCode::StaleCoefficients: return "StaleCoefficients";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::SpanMismatch: return "SpanMismatch";
    case ErrorCode::Parse: return "Parse";
    case ErrorCode::Validation: return "Validation";
  }
  return "Unknown";
}

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace solarmlr
