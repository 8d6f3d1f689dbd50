#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace planelio {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Hamilton unit quaternion. Constructed scalar-first: Quat(w, x, y, z).
using Quat = Eigen::Quaterniond;

/// Rotation vector (axis * angle, radians).
using RotVec = Eigen::Vector3d;

/// Rigid pose: world-from-body position and attitude.
struct Pose {
  Vec3 p = Vec3::Zero();
  Quat q = Quat::Identity();

  Vec3 operator*(const Vec3& v) const { return q * v + p; }
  Pose operator*(const Pose& o) const { return {q * o.p + p, (q * o.q).normalized()}; }
  Pose inverse() const {
    const Quat qi = q.conjugate();
    return {-(qi * p), qi};
  }
};

namespace rot {

/// Threshold below which exp/log switch to their Taylor expansions.
inline constexpr double kSmallAngle = 1e-8;

Quat quat_mul(const Quat& a, const Quat& b);

/// Exp: rotation vector to unit quaternion.
Quat exp_map(const RotVec& phi);

/// Log: unit quaternion to rotation vector with |phi| <= pi. q and -q map to
/// the same result.
RotVec log_map(const Quat& q);

Mat3 skew(const Vec3& v);

/// Right Jacobian of SO(3) and its inverse.
Mat3 right_jacobian(const RotVec& phi);
Mat3 right_jacobian_inv(const RotVec& phi);

/// Rotation angle of q in [0, pi].
double angle(const Quat& q);

/// Spherical linear interpolation along the shortest arc; s in [0, 1].
Quat slerp(const Quat& a, const Quat& b, double s);

/// ZYX Euler angles (roll, pitch, yaw) of a world-from-body attitude.
Vec3 to_rpy(const Quat& q);
Quat from_rpy(double roll, double pitch, double yaw);

}  // namespace rot
}  // namespace planelio
