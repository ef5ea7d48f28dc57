#pragma once

#include <stdexcept>
#include <string>

namespace mocap {

/// Failure categories raised by the core. The numeric values of the
/// command-level codes double as CLI exit codes.
enum class ErrorCode {
  Config = 2,
  Io = 3,
  Calibration = 4,
  DivergedIcp = 5,
  SingularKkt = 6,
  NonPositiveDepth = 10,
  DegenerateQuad,
  PointAtInfinity,
  UnknownCode,
  BadCornerIndex,
  UnknownCorner,
  AlphabetExhausted,
  ParallelRays,
  NoConvergence,
  SingularBlend,
  InsufficientSeeds,
  DisconnectedMesh,
  NoObservations,
  InvalidArgument,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mocap
