#include "needleplan/error.hpp"

namespace needleplan {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::FrameError: return "FrameError";
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::EmptySurface: return "EmptySurface";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::DegenerateMotion: return "DegenerateMotion";
    case ErrorCode::InsufficientMarkers: return "InsufficientMarkers";
    case ErrorCode::NoCandidates: return "NoCandidates";
    case ErrorCode::ContextMissing: return "ContextMissing";
    case ErrorCode::InvalidTrajectory: return "InvalidTrajectory";
    case ErrorCode::PlanningFailed: return "PlanningFailed";
    case ErrorCode::NoPuncture: return "NoPuncture";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace needleplan
