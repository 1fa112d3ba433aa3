#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace balmkt {

enum class ErrorCode {
  NonPositiveInitialCap,
  AsymmetricCovariance,
  NegativeEigenvalue,
  DimensionMismatch,
  IndefiniteMatrix,
  ShapeMismatch,
  NonFiniteValue,
  NumericalOverflow,
  InconsistentInitialState,
  ZeroTotalCapital,
  SingularCovariance,
  NoSolution,
  InfeasibleConstraint,
  CompensatorUnavailable,
  HorizonTooShort,
  ConfigParseError,
  VersionMismatch,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonPositiveInitialCap: return "NonPositiveInitialCap";
    case ErrorCode::AsymmetricCovariance: return "AsymmetricCovariance";
    case ErrorCode::NegativeEigenvalue: return "NegativeEigenvalue";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::IndefiniteMatrix: return "IndefiniteMatrix";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::NumericalOverflow: return "NumericalOverflow";
    case ErrorCode::InconsistentInitialState: return "InconsistentInitialState";
    case ErrorCode::ZeroTotalCapital: return "ZeroTotalCapital";
    case ErrorCode::SingularCovariance: return "SingularCovariance";
    case ErrorCode::NoSolution: return "NoSolution";
    case ErrorCode::InfeasibleConstraint: return "InfeasibleConstraint";
    case ErrorCode::CompensatorUnavailable: return "CompensatorUnavailable";
    case ErrorCode::HorizonTooShort: return "HorizonTooShort";
    case ErrorCode::ConfigParseError: return "ConfigParseError";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
  }
  return "Unknown";
}

/// Single exception type for the library; `code()` says which contract failed.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace balmkt
