#pragma once

#include <span>
#include <vector>

#include "planelio/rotations.hpp"

namespace planelio {

using Vec15 = Eigen::Matrix<double, 15, 1>;
using Mat15 = Eigen::Matrix<double, 15, 15>;

/// Error-state layout shared by the IMU engine and the estimator.
namespace es {
inline constexpr int kP = 0;
inline constexpr int kR = 3;
inline constexpr int kV = 6;
inline constexpr int kBg = 9;
inline constexpr int kBa = 12;
inline constexpr int kDim = 15;
}  // namespace es

struct ImuSample {
  double t = 0.0;
  Vec3 gyro = Vec3::Zero();   ///< rad/s, body frame
  Vec3 accel = Vec3::Zero();  ///< specific force, m/s^2, body frame
};

/// Navigation state of one window node.
struct ImuState {
  double t = 0.0;
  Vec3 p = Vec3::Zero();  ///< position of the body in the world frame
  Quat q = Quat::Identity();
  Vec3 v = Vec3::Zero();
  Vec3 bg = Vec3::Zero();
  Vec3 ba = Vec3::Zero();

  Pose pose() const { return {p, q}; }
};

struct WorldConfig {
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);
  double gyro_noise_density = 2.4e-4;   ///< rad/s/sqrt(Hz)
  double accel_noise_density = 1.7e-3;  ///< m/s^2/sqrt(Hz)
  double gyro_bias_walk = 1e-5;         ///< rad/s^2/sqrt(Hz)
  double accel_bias_walk = 1e-4;        ///< m/s^3/sqrt(Hz)
};

struct StaticInitConfig {
  double min_duration = 1.0;   ///< s
  double max_gyro_std = 0.05;  ///< rad/s
};

/// Leveling from the mean specific force and gyro bias from the mean rate of
/// a stationary segment. Yaw, position, velocity and accelerometer bias are
/// zero. The state time is the last sample's time.
ImuState static_initialize(std::span<const ImuSample> samples, const WorldConfig& world,
                           const StaticInitConfig& config = {});

/// Bias-corrected midpoint integration across one sample interval.
/// Throws Error(kNonMonotonicTime) unless b.t > a.t.
ImuState mechanize(const ImuState& state, const ImuSample& a, const ImuSample& b, const WorldConfig& world);

/// Pose at time t: linear in position, slerp in attitude between the
/// bracketing states. Throws Error(kOutOfRange) outside the trajectory.
Pose interpolate_pose(std::span<const ImuState> trajectory, double t);

/// Samples covering [t0, t1] with endpoints synthesized by linear
/// interpolation when they fall between recorded samples.
/// Throws Error(kOutOfRange) if the stream does not cover the interval.
std::vector<ImuSample> samples_between(std::span<const ImuSample> stream, double t0, double t1);

struct PreintegrationDelta {
  double dt_total = 0.0;
  Vec3 dp = Vec3::Zero();
  Vec3 dv = Vec3::Zero();
  Quat dq = Quat::Identity();
  /// Full error-state transition of the delta; the bias Jacobians are its
  /// (p, phi, v) x (bg, ba) blocks.
  Mat15 jacobian = Mat15::Identity();
  Mat15 cov = Mat15::Zero();
  Vec3 lin_bg = Vec3::Zero();
  Vec3 lin_ba = Vec3::Zero();
  int sample_count = 0;

  /// 9x6 block d{dp, dv, dq} / d{bg, ba}.
  Eigen::Matrix<double, 9, 6> bias_jacobians() const;

  Mat3 dp_dbg() const { return jacobian.block<3, 3>(es::kP, es::kBg); }
  Mat3 dp_dba() const { return jacobian.block<3, 3>(es::kP, es::kBa); }
  Mat3 dq_dbg() const { return jacobian.block<3, 3>(es::kR, es::kBg); }
  Mat3 dv_dbg() const { return jacobian.block<3, 3>(es::kV, es::kBg); }
  Mat3 dv_dba() const { return jacobian.block<3, 3>(es::kV, es::kBa); }
};

/// Incremental midpoint preintegrator.
class Preintegrator {
 public:
  Preintegrator(const ImuSample& first, const Vec3& bg, const Vec3& ba, const WorldConfig& world);

  /// Appends the next sample. Throws Error(kNonMonotonicTime).
  void add(const ImuSample& sample);

  const PreintegrationDelta& delta() const { return delta_; }

 private:
  ImuSample last_;
  WorldConfig world_;
  PreintegrationDelta delta_;
};

/// Preintegrates an ordered sample list (at least two samples).
PreintegrationDelta preintegrate(std::span<const ImuSample> samples, const Vec3& bg, const Vec3& ba,
                                 const WorldConfig& world);

/// Stacked residual ordered (p, phi, v, bg, ba), deltas first-order
/// corrected for prev.bg/prev.ba relative to the linearization bias.
Vec15 preintegration_residual(const ImuState& prev, const ImuState& curr, const PreintegrationDelta& delta,
                              const WorldConfig& world);

/// Analytic Jacobians of preintegration_residual w.r.t. the right-perturbed
/// error states of both nodes.
void preintegration_jacobians(const ImuState& prev, const ImuState& curr, const PreintegrationDelta& delta,
                              const WorldConfig& world, Mat15* j_prev, Mat15* j_curr);

/// Applies an error-state increment (p, phi, v, bg, ba) to a state.
ImuState retract(const ImuState& x, const Vec15& dx);
/// Error-state difference such that retract(a, local_difference(a, b)) == b.
Vec15 local_difference(const ImuState& a, const ImuState& b);

}  // namespace planelio
