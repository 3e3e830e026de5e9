#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace jcr {

enum class ErrorKind {
  InvalidInput,
  ParseError,
  IoError,
  InvalidRotation,
  DegenerateMatrix,
  DisconnectedGraph,
  NonConvergence,
  EmptyCloud,
  LengthMismatch,
  TooFewPoses,
  DegenerateMotion,
  RankDeficientC,
  ScaleAtBound,
  MissingView,
  UncalibratedInput,
  DimensionMismatch,
  DegenerateBounds,
  SingleClass,
  InsufficientDiversity,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::InvalidRotation: return "InvalidRotation";
    case ErrorKind::DegenerateMatrix: return "DegenerateMatrix";
    case ErrorKind::DisconnectedGraph: return "DisconnectedGraph";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::EmptyCloud: return "EmptyCloud";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::TooFewPoses: return "TooFewPoses";
    case ErrorKind::DegenerateMotion: return "DegenerateMotion";
    case ErrorKind::RankDeficientC: return "RankDeficientC";
    case ErrorKind::ScaleAtBound: return "ScaleAtBound";
    case ErrorKind::MissingView: return "MissingView";
    case ErrorKind::UncalibratedInput: return "UncalibratedInput";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::DegenerateBounds: return "DegenerateBounds";
    case ErrorKind::SingleClass: return "SingleClass";
    case ErrorKind::InsufficientDiversity: return "InsufficientDiversity";
  }
  return "Unknown";
}

/// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), message_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

/// Process exit codes used by the CLI: 2 input error, 3 degenerate geometry, 4 non-convergence.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DegenerateMatrix:
    case ErrorKind::DegenerateMotion:
    case ErrorKind::RankDeficientC:
    case ErrorKind::ScaleAtBound:
    case ErrorKind::InsufficientDiversity:
    case ErrorKind::DegenerateBounds:
    case ErrorKind::EmptyCloud:
    case ErrorKind::SingleClass:
      return 3;
    case ErrorKind::NonConvergence:
    case ErrorKind::UncalibratedInput:
      return 4;
    default:
      return 2;
  }
}

}  // namespace jcr
