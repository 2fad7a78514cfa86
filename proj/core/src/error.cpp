#include "seqmosaic/error.hpp"

namespace seqmosaic {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::BehindCamera: return "BehindCamera";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::TooFewMatches: return "TooFewMatches";
    case ErrorKind::InitializationFailed: return "InitializationFailed";
    case ErrorKind::TrackingLost: return "TrackingLost";
    case ErrorKind::DivergedAdjustment: return "DivergedAdjustment";
    case ErrorKind::MissingPose: return "MissingPose";
    case ErrorKind::TooFewPoints: return "TooFewPoints";
    case ErrorKind::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorKind::InsufficientInliers: return "InsufficientInliers";
    case ErrorKind::EmptyCloud: return "EmptyCloud";
    case ErrorKind::DegenerateHint: return "DegenerateHint";
    case ErrorKind::CameraOnPlane: return "CameraOnPlane";
    case ErrorKind::EmptyFootprint: return "EmptyFootprint";
    case ErrorKind::EmptyChunk: return "EmptyChunk";
    case ErrorKind::DuplicateFrame: return "DuplicateFrame";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::ClientOverflow: return "ClientOverflow";
    case ErrorKind::UnknownCommand: return "UnknownCommand";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::InputError: return "InputError";
    case ErrorKind::ParseError: return "ParseError";
  }
  return "Unknown";
}

}  // namespace seqmosaic
