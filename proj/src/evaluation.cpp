#include "planelio/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "planelio/error.hpp"

namespace planelio {

EvalMode parse_eval_mode(const std::string& name) {
  if (name == "ate") return EvalMode::kAte;
  if (name == "are") return EvalMode::kAre;
  if (name == "end_to_end") return EvalMode::kEndToEnd;
  throw Error(ErrorKind::kInvalidConfig, "unknown evaluation mode '" + name + "'");
}

std::string to_string(EvalMode mode) {
  switch (mode) {
    case EvalMode::kAte:
      return "ate";
    case EvalMode::kAre:
      return "are";
    case EvalMode::kEndToEnd:
      return "end_to_end";
  }
  return "?";
}

double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  a = std::fmod(a + pi, 2.0 * pi);
  if (a <= 0.0) a += 2.0 * pi;
  return a - pi;
}

std::vector<PosePair> associate_trajectories(const TrajectoryRecord& estimate, const TrajectoryRecord& truth,
                                             double max_dt) {
  if (estimate.empty() || truth.empty() || estimate.back().t < truth.front().t - max_dt ||
      truth.back().t < estimate.front().t - max_dt) {
    throw Error(ErrorKind::kNoOverlap, "estimate and truth do not overlap in time");
  }
  std::vector<PosePair> pairs;
  for (const TimedPose& e : estimate) {
    auto it = std::lower_bound(truth.begin(), truth.end(), e.t,
                               [](const TimedPose& p, double t) { return p.t < t; });
    const TimedPose* best = nullptr;
    if (it != truth.end()) best = &*it;
    if (it != truth.begin()) {
      const TimedPose* prev = &*std::prev(it);
      if (!best || std::abs(prev->t - e.t) <= std::abs(best->t - e.t)) best = prev;
    }
    if (best && std::abs(best->t - e.t) <= max_dt) pairs.push_back({e.t, e.pose, best->pose});
  }
  if (pairs.size() < 3) throw Error(ErrorKind::kTooFewPairs, "fewer than three associated poses");
  return pairs;
}

Pose align_rigid(const std::vector<PosePair>& pairs) {
  Eigen::Matrix3Xd src(3, static_cast<Eigen::Index>(pairs.size()));
  Eigen::Matrix3Xd dst(3, static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    src.col(static_cast<Eigen::Index>(i)) = pairs[i].estimate.p;
    dst.col(static_cast<Eigen::Index>(i)) = pairs[i].truth.p;
  }
  const Eigen::Matrix4d t = Eigen::umeyama(src, dst, false);
  return {t.block<3, 1>(0, 3), Quat(Mat3(t.block<3, 3>(0, 0))).normalized()};
}

EvalResult evaluate_trajectory(const TrajectoryRecord& estimate, const TrajectoryRecord& truth, EvalMode mode) {
  const std::vector<PosePair> pairs = associate_trajectories(estimate, truth);
  EvalResult r;
  r.mode = mode;
  r.pairs = pairs.size();
  if (mode == EvalMode::kEndToEnd) {
    r.alignment = pairs.front().truth * pairs.front().estimate.inverse();
    r.value = (r.alignment * pairs.back().estimate.p - pairs.back().truth.p).norm();
    return r;
  }
  r.alignment = align_rigid(pairs);
  double sum = 0.0;
  for (const PosePair& p : pairs) {
    const Pose aligned = r.alignment * p.estimate;
    if (mode == EvalMode::kAte) {
      sum += (aligned.p - p.truth.p).squaredNorm();
    } else {
      const double a = rot::angle(p.truth.q.conjugate() * aligned.q);
      sum += a * a;
    }
  }
  r.value = std::sqrt(sum / static_cast<double>(pairs.size()));
  if (mode == EvalMode::kAre) r.value *= 180.0 / std::numbers::pi;
  return r;
}

std::vector<AxisError> error_series(const TrajectoryRecord& estimate, const TrajectoryRecord& truth) {
  const std::vector<PosePair> pairs = associate_trajectories(estimate, truth);
  const Pose rigid = align_rigid(pairs);
  const double yaw0 = rot::to_rpy(pairs.front().truth.q).z() - rot::to_rpy(pairs.front().estimate.q).z();
  std::vector<AxisError> out;
  out.reserve(pairs.size());
  for (const PosePair& p : pairs) {
    AxisError e;
    e.t = p.t;
    e.position = (rigid * p.estimate).p - p.truth.p;
    const Vec3 est = rot::to_rpy(p.estimate.q);
    const Vec3 tru = rot::to_rpy(p.truth.q);
    e.attitude = {wrap_angle(est.x() - tru.x()), wrap_angle(est.y() - tru.y()), wrap_angle(est.z() + yaw0 - tru.z())};
    out.push_back(e);
  }
  return out;
}

}  // namespace planelio
