#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace seqmosaic {

enum class ErrorKind {
  InvalidArgument,
  BehindCamera,
  NoConvergence,
  TooFewMatches,
  InitializationFailed,
  TrackingLost,
  DivergedAdjustment,
  MissingPose,
  TooFewPoints,
  DegenerateGeometry,
  InsufficientInliers,
  EmptyCloud,
  DegenerateHint,
  CameraOnPlane,
  EmptyFootprint,
  EmptyChunk,
  DuplicateFrame,
  IoFailure,
  ClientOverflow,
  UnknownCommand,
  InvalidSpec,
  DegenerateConfiguration,
  ConfigError,
  InputError,
  ParseError,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers can branch
// on it without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace seqmosaic
