#include "fhc/error.hpp"

namespace fhc {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::NotSymmetric: return "NotSymmetric";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::UnsupportedPrimitive: return "UnsupportedPrimitive";
    case ErrorCode::NonScalarOutput: return "NonScalarOutput";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnsupportedLayout: return "UnsupportedLayout";
    case ErrorCode::NonpositiveDistance: return "NonpositiveDistance";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::ZeroEffectiveChannel: return "ZeroEffectiveChannel";
    case ErrorCode::DegenerateInitialization: return "DegenerateInitialization";
    case ErrorCode::NonFiniteUpdate: return "NonFiniteUpdate";
    case ErrorCode::UnknownMethod: return "UnknownMethod";
    case ErrorCode::NonpositiveInput: return "NonpositiveInput";
    case ErrorCode::EmptyGrid: return "EmptyGrid";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::MissingCheckpoint: return "MissingCheckpoint";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
  }
  return "Unknown";
}

}  // namespace fhc
