#include "planelio/rotations.hpp"

#include <algorithm>
#include <cmath>

namespace planelio::rot {

Quat quat_mul(const Quat& a, const Quat& b) { return (a * b).normalized(); }

Quat exp_map(const RotVec& phi) {
  const double theta = phi.norm();
  if (theta < kSmallAngle) {
    // q ~ (1, phi/2) to second order
    Quat q(1.0 - theta * theta / 8.0, 0.5 * phi.x(), 0.5 * phi.y(), 0.5 * phi.z());
    return q.normalized();
  }
  const double half = 0.5 * theta;
  const Vec3 axis = phi / theta;
  const double s = std::sin(half);
  return Quat(std::cos(half), s * axis.x(), s * axis.y(), s * axis.z());
}

RotVec log_map(const Quat& q_in) {
  Quat q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Vec3 v = q.vec();
  const double vn = v.norm();
  if (vn < kSmallAngle) {
    // 2 * v / w, accurate to third order
    return 2.0 * v / q.w();
  }
  const double theta = 2.0 * std::atan2(vn, q.w());
  return theta * v / vn;
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Mat3 right_jacobian(const RotVec& phi) {
  const double theta = phi.norm();
  const Mat3 k = skew(phi);
  if (theta < 1e-6) return Mat3::Identity() - 0.5 * k + k * k / 6.0;
  const double t2 = theta * theta;
  return Mat3::Identity() - (1.0 - std::cos(theta)) / t2 * k +
         (theta - std::sin(theta)) / (t2 * theta) * k * k;
}

Mat3 right_jacobian_inv(const RotVec& phi) {
  const double theta = phi.norm();
  const Mat3 k = skew(phi);
  if (theta < 1e-6) return Mat3::Identity() + 0.5 * k + k * k / 12.0;
  const double t2 = theta * theta;
  const double c = 1.0 / t2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::Identity() + 0.5 * k + c * k * k;
}

double angle(const Quat& q) { return log_map(q).norm(); }

Quat slerp(const Quat& a, const Quat& b, double s) {
  Quat d = a.conjugate() * b;
  return quat_mul(a, exp_map(s * log_map(d)));
}

Vec3 to_rpy(const Quat& q) {
  const Mat3 r = q.normalized().toRotationMatrix();
  const double pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  const double roll = std::atan2(r(2, 1), r(2, 2));
  const double yaw = std::atan2(r(1, 0), r(0, 0));
  return {roll, pitch, yaw};
}

Quat from_rpy(double roll, double pitch, double yaw) {
  return (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
          Eigen::AngleAxisd(roll, Vec3::UnitX()))
      .normalized();
}

}  // namespace planelio::rot
