#include "dvio/error.hpp"

namespace dvio {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::NonMonotonicTimestamp: return "NonMonotonicTimestamp";
    case ErrorCode::ExcessiveGap: return "ExcessiveGap";
    case ErrorCode::BiasMismatch: return "BiasMismatch";
    case ErrorCode::ImageSizeMismatch: return "ImageSizeMismatch";
    case ErrorCode::NoCoObservation: return "NoCoObservation";
    case ErrorCode::InsufficientConstraints: return "InsufficientConstraints";
    case ErrorCode::DetectionTimeout: return "DetectionTimeout";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::AssociationGap: return "AssociationGap";
    case ErrorCode::InsufficientSpan: return "InsufficientSpan";
    case ErrorCode::SpecInvalid: return "SpecInvalid";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
  }
  return "Unknown";
}

}  // namespace dvio
