#include "neurofuse/error.hpp"

namespace neurofuse {

const char* error_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorCode::TruncatedData: return "TruncatedData";
    case ErrorCode::NonPositiveDim: return "NonPositiveDim";
    case ErrorCode::SingularTransform: return "SingularTransform";
    case ErrorCode::NonPositiveIntensity: return "NonPositiveIntensity";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::DegenerateHistogram: return "DegenerateHistogram";
    case ErrorCode::GridOutsideDomain: return "GridOutsideDomain";
    case ErrorCode::ConstantImage: return "ConstantImage";
    case ErrorCode::DivergedOptimization: return "DivergedOptimization";
    case ErrorCode::EmptyCerebellumReference: return "EmptyCerebellumReference";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::InputTooSmall: return "InputTooSmall";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::SingleClassDataset: return "SingleClassDataset";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::UnsatisfiableSplit: return "UnsatisfiableSplit";
    case ErrorCode::EmptyRegion: return "EmptyRegion";
    case ErrorCode::DegenerateDenominator: return "DegenerateDenominator";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

}  // namespace neurofuse
