#pragma once

#include <stdexcept>
#include <string>

namespace neurofuse {

enum class ErrorCode {
  BadMagic,
  UnsupportedDatatype,
  TruncatedData,
  NonPositiveDim,
  SingularTransform,
  NonPositiveIntensity,
  EmptyMask,
  DegenerateHistogram,
  GridOutsideDomain,
  ConstantImage,
  DivergedOptimization,
  EmptyCerebellumReference,
  GridMismatch,
  InputTooSmall,
  ShapeMismatch,
  SingleClassDataset,
  NonFiniteLoss,
  UnsatisfiableSplit,
  EmptyRegion,
  DegenerateDenominator,
  InvalidArgument,
  IoError,
  ParseError,
};

const char* error_name(ErrorCode code) noexcept;

// All domain failures are reported through this one exception type; the code
// is what the CLI prints and what tests match on.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace neurofuse
