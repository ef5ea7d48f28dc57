#include "core/error.hpp"

namespace mocap {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Config: return "ConfigError";
    case ErrorCode::Io: return "IoError";
    case ErrorCode::Calibration: return "CalibrationError";
    case ErrorCode::DivergedIcp: return "DivergedICP";
    case ErrorCode::SingularKkt: return "SingularKKT";
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::DegenerateQuad: return "DegenerateQuad";
    case ErrorCode::PointAtInfinity: return "PointAtInfinity";
    case ErrorCode::UnknownCode: return "UnknownCode";
    case ErrorCode::BadCornerIndex: return "BadCornerIndex";
    case ErrorCode::UnknownCorner: return "UnknownCorner";
    case ErrorCode::AlphabetExhausted: return "AlphabetExhausted";
    case ErrorCode::ParallelRays: return "ParallelRays";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::SingularBlend: return "SingularBlend";
    case ErrorCode::InsufficientSeeds: return "InsufficientSeeds";
    case ErrorCode::DisconnectedMesh: return "DisconnectedMesh";
    case ErrorCode::NoObservations: return "NoObservations";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace mocap
