#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cast {

enum class ErrorCode {
  AllZeroMass,
  NegativeMass,
  DimensionMismatch,
  ZeroComponent,
  InvalidArgument,
  WeightSumInvalid,
  EmptyPrefix,
  EmptyBatch,
  EmptyBank,
  NonFiniteGradient,
  DivergedTraining,
  InsufficientData,
  ConfigUtilizationOutOfBand,
  RejectionBudgetExceeded,
  TooFewSystems,
  OptimizationNotConverged,
  NoScoredPositions,
  NoEligibleSequences,
  TooFewSequences,
  ParseError,
  SchemaVersionMismatch,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::AllZeroMass: return "AllZeroMass";
    case ErrorCode::NegativeMass: return "NegativeMass";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ZeroComponent: return "ZeroComponent";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::WeightSumInvalid: return "WeightSumInvalid";
    case ErrorCode::EmptyPrefix: return "EmptyPrefix";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::EmptyBank: return "EmptyBank";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::DivergedTraining: return "DivergedTraining";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::ConfigUtilizationOutOfBand: return "ConfigUtilizationOutOfBand";
    case ErrorCode::RejectionBudgetExceeded: return "RejectionBudgetExceeded";
    case ErrorCode::TooFewSystems: return "TooFewSystems";
    case ErrorCode::OptimizationNotConverged: return "OptimizationNotConverged";
    case ErrorCode::NoScoredPositions: return "NoScoredPositions";
    case ErrorCode::NoEligibleSequences: return "NoEligibleSequences";
    case ErrorCode::TooFewSequences: return "TooFewSequences";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Parse failures remember the 1-based line they came from.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": " + message), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace cast
