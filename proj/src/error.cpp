#include "planelio/error.hpp"

namespace planelio {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInsufficientData: return "InsufficientData";
    case ErrorKind::kExcessMotion: return "ExcessMotion";
    case ErrorKind::kNonMonotonicTime: return "NonMonotonicTime";
    case ErrorKind::kOutOfRange: return "OutOfRange";
    case ErrorKind::kDegenerateGeometry: return "DegenerateGeometry";
    case ErrorKind::kNonPositiveInput: return "NonPositiveInput";
    case ErrorKind::kTrajectoryGap: return "TrajectoryGap";
    case ErrorKind::kEmptyMap: return "EmptyMap";
    case ErrorKind::kMapTooSmall: return "MapTooSmall";
    case ErrorKind::kSolverDiverged: return "SolverDiverged";
    case ErrorKind::kSingularInformation: return "SingularInformation";
    case ErrorKind::kIoFailure: return "IoFailure";
    case ErrorKind::kUnknownPreset: return "UnknownPreset";
    case ErrorKind::kDatasetError: return "DatasetError";
    case ErrorKind::kInitializationFailure: return "InitializationFailure";
    case ErrorKind::kNoOverlap: return "NoOverlap";
    case ErrorKind::kTooFewPairs: return "TooFewPairs";
    case ErrorKind::kInvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

}  // namespace planelio
