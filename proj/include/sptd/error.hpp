#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sptd {

// Every failure the toolkit reports carries one of these codes. The CLI maps
// them onto exit codes via exit_code().
enum class ErrorCode {
  MalformedHeader,
  PayloadLengthMismatch,
  NonFiniteValue,
  EmptyInput,
  FractionOutOfRange,
  DimMismatch,
  ShapeMismatch,
  UnreadableImage,
  InvalidMask,
  RankDeficientInit,
  NonFiniteInput,
  ShapeMismatchAtSplit,
  UnsupportedGraph,
  SpecInvalid,
  PatchLargerThanImage,
  EmptyManifest,
  KExceedsSamples,
  DegenerateConcept,
  ChannelMismatch,
  UnsupportedDimension,
  VarianceZero,
  ConceptIndexOutOfRange,
  BankReportMismatch,
  EmptyGroundTruth,
  MissingExplanation,
  NoFaceFrames,
  InsufficientFrames,
  InvalidArgument,
  IoError,
};

constexpr std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::PayloadLengthMismatch: return "PayloadLengthMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::FractionOutOfRange: return "FractionOutOfRange";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnreadableImage: return "UnreadableImage";
    case ErrorCode::InvalidMask: return "InvalidMask";
    case ErrorCode::RankDeficientInit: return "RankDeficientInit";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::ShapeMismatchAtSplit: return "ShapeMismatchAtSplit";
    case ErrorCode::UnsupportedGraph: return "UnsupportedGraph";
    case ErrorCode::SpecInvalid: return "SpecInvalid";
    case ErrorCode::PatchLargerThanImage: return "PatchLargerThanImage";
    case ErrorCode::EmptyManifest: return "EmptyManifest";
    case ErrorCode::KExceedsSamples: return "KExceedsSamples";
    case ErrorCode::DegenerateConcept: return "DegenerateConcept";
    case ErrorCode::ChannelMismatch: return "ChannelMismatch";
    case ErrorCode::UnsupportedDimension: return "UnsupportedDimension";
    case ErrorCode::VarianceZero: return "VarianceZero";
    case ErrorCode::ConceptIndexOutOfRange: return "ConceptIndexOutOfRange";
    case ErrorCode::BankReportMismatch: return "BankReportMismatch";
    case ErrorCode::EmptyGroundTruth: return "EmptyGroundTruth";
    case ErrorCode::MissingExplanation: return "MissingExplanation";
    case ErrorCode::NoFaceFrames: return "NoFaceFrames";
    case ErrorCode::InsufficientFrames: return "InsufficientFrames";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

// Degenerate computations (nothing wrong with the inputs as files, but the
// math has no answer) exit with 3; everything else is an input error.
constexpr int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::VarianceZero:
    case ErrorCode::RankDeficientInit:
    case ErrorCode::DegenerateConcept:
      return 3;
    default:
      return 2;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(error_name(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return error_name(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) { throw Error(code, detail); }

}  // namespace sptd
