#pragma once

#include <string>
#include <vector>

#include "planelio/dataset.hpp"

namespace planelio {

enum class EvalMode { kAte, kAre, kEndToEnd };

/// "ate", "are" or "end_to_end". Throws Error(kInvalidConfig).
EvalMode parse_eval_mode(const std::string& name);
std::string to_string(EvalMode mode);

struct PosePair {
  double t = 0.0;
  Pose estimate;
  Pose truth;
};

/// Pairs each estimate pose with the nearest truth pose within max_dt.
/// Throws Error(kNoOverlap) when the time spans are disjoint and
/// Error(kTooFewPairs) when fewer than three pairs result.
std::vector<PosePair> associate_trajectories(const TrajectoryRecord& estimate, const TrajectoryRecord& truth,
                                             double max_dt = 0.01);

/// Rigid transform T minimizing sum |truth_i - T * estimate_i|^2 (no scale).
Pose align_rigid(const std::vector<PosePair>& pairs);

struct EvalResult {
  EvalMode mode = EvalMode::kAte;
  double value = 0.0;  ///< m for ate and end_to_end, degrees for are
  std::size_t pairs = 0;
  Pose alignment;
};

EvalResult evaluate_trajectory(const TrajectoryRecord& estimate, const TrajectoryRecord& truth, EvalMode mode);

/// Per-pair errors: position after the rigid alignment; roll, pitch and yaw
/// differences (rad) after aligning yaw and position at the first pair.
struct AxisError {
  double t = 0.0;
  Vec3 position = Vec3::Zero();
  Vec3 attitude = Vec3::Zero();
};

std::vector<AxisError> error_series(const TrajectoryRecord& estimate, const TrajectoryRecord& truth);

/// Angle wrapped to (-pi, pi].
double wrap_angle(double a);

}  // namespace planelio
