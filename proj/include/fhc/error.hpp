#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fhc {

enum class ErrorCode {
  RankDeficient,
  NotSymmetric,
  NonConvergence,
  NotPositiveDefinite,
  UnsupportedPrimitive,
  NonScalarOutput,
  ShapeMismatch,
  UnsupportedLayout,
  NonpositiveDistance,
  InvalidConfig,
  SingularSystem,
  ZeroEffectiveChannel,
  DegenerateInitialization,
  NonFiniteUpdate,
  UnknownMethod,
  NonpositiveInput,
  EmptyGrid,
  NonFiniteGradient,
  NonFiniteLoss,
  MissingCheckpoint,
  IoError,
  FormatError,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fhc
