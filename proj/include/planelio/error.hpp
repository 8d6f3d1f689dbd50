#pragma once

#include <stdexcept>
#include <string>

namespace planelio {

enum class ErrorKind {
  kInsufficientData,
  kExcessMotion,
  kNonMonotonicTime,
  kOutOfRange,
  kDegenerateGeometry,
  kNonPositiveInput,
  kTrajectoryGap,
  kEmptyMap,
  kMapTooSmall,
  kSolverDiverged,
  kSingularInformation,
  kIoFailure,
  kUnknownPreset,
  kDatasetError,
  kInitializationFailure,
  kNoOverlap,
  kTooFewPairs,
  kInvalidConfig,
};

const char* to_string(ErrorKind kind);

/// Hard failure raised by library operations. Soft outcomes (a rejected
/// association, a failed match) are reported through std::optional instead.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace planelio
