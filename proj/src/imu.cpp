#include "planelio/imu.hpp"

#include <algorithm>
#include <cmath>

#include "planelio/error.hpp"

namespace planelio {

using rot::exp_map;
using rot::log_map;
using rot::skew;

ImuState static_initialize(std::span<const ImuSample> samples, const WorldConfig& world,
                           const StaticInitConfig& config) {
  if (samples.size() < 2 || samples.back().t - samples.front().t < config.min_duration) {
    throw Error(ErrorKind::kInsufficientData, "static segment shorter than the configured minimum");
  }
  const double n = static_cast<double>(samples.size());
  Vec3 mean_gyro = Vec3::Zero();
  Vec3 mean_accel = Vec3::Zero();
  for (const ImuSample& s : samples) {
    mean_gyro += s.gyro;
    mean_accel += s.accel;
  }
  mean_gyro /= n;
  mean_accel /= n;

  double gyro_var = 0.0;
  for (const ImuSample& s : samples) gyro_var += (s.gyro - mean_gyro).squaredNorm();
  gyro_var /= n;
  if (std::sqrt(gyro_var) > config.max_gyro_std) {
    throw Error(ErrorKind::kExcessMotion, "gyro spread exceeds the stationary threshold");
  }
  if (mean_accel.norm() < 1e-6) {
    throw Error(ErrorKind::kInsufficientData, "no specific force observed");
  }

  // A stationary body measures f = -R^T g; pick the attitude that maps f onto
  // -g and drop its yaw.
  const Quat level = Quat::FromTwoVectors(mean_accel, -world.gravity);
  const Vec3 rpy = rot::to_rpy(level);

  ImuState state;
  state.t = samples.back().t;
  state.q = rot::from_rpy(rpy.x(), rpy.y(), 0.0);
  state.bg = mean_gyro;
  return state;
}

ImuState mechanize(const ImuState& state, const ImuSample& a, const ImuSample& b, const WorldConfig& world) {
  const double dt = b.t - a.t;
  if (!(dt > 0.0)) {
    throw Error(ErrorKind::kNonMonotonicTime, "IMU interval must be positive");
  }
  ImuState out = state;
  const Vec3 w = 0.5 * (a.gyro + b.gyro) - state.bg;
  out.q = rot::quat_mul(state.q, exp_map(w * dt));
  const Vec3 acc0 = state.q * (a.accel - state.ba) + world.gravity;
  const Vec3 acc1 = out.q * (b.accel - state.ba) + world.gravity;
  const Vec3 acc = 0.5 * (acc0 + acc1);
  out.v = state.v + acc * dt;
  out.p = state.p + state.v * dt + 0.5 * acc * dt * dt;
  out.t = b.t;
  return out;
}

Pose interpolate_pose(std::span<const ImuState> trajectory, double t) {
  if (trajectory.empty() || t < trajectory.front().t || t > trajectory.back().t) {
    throw Error(ErrorKind::kOutOfRange, "time outside the trajectory");
  }
  auto it = std::lower_bound(trajectory.begin(), trajectory.end(), t,
                             [](const ImuState& s, double tt) { return s.t < tt; });
  if (it->t == t) return it->pose();
  const ImuState& hi = *it;
  const ImuState& lo = *(it - 1);
  const double s = (t - lo.t) / (hi.t - lo.t);
  return {lo.p + s * (hi.p - lo.p), rot::slerp(lo.q, hi.q, s)};
}

namespace {

ImuSample lerp_sample(const ImuSample& a, const ImuSample& b, double t) {
  const double s = (t - a.t) / (b.t - a.t);
  return {t, a.gyro + s * (b.gyro - a.gyro), a.accel + s * (b.accel - a.accel)};
}

}  // namespace

std::vector<ImuSample> samples_between(std::span<const ImuSample> stream, double t0, double t1) {
  if (stream.empty() || !(t1 > t0) || t0 < stream.front().t || t1 > stream.back().t) {
    throw Error(ErrorKind::kOutOfRange, "IMU stream does not cover the requested interval");
  }
  const auto by_time = [](const ImuSample& s, double t) { return s.t < t; };
  auto lo = std::lower_bound(stream.begin(), stream.end(), t0, by_time);
  auto hi = std::lower_bound(stream.begin(), stream.end(), t1, by_time);

  std::vector<ImuSample> out;
  out.reserve(static_cast<std::size_t>(hi - lo) + 2);
  if (lo->t == t0) {
    out.push_back(*lo);
    ++lo;
  } else {
    out.push_back(lerp_sample(*(lo - 1), *lo, t0));
  }
  for (auto it = lo; it != hi; ++it) out.push_back(*it);
  if (hi->t == t1) {
    out.push_back(*hi);
  } else {
    out.push_back(lerp_sample(*(hi - 1), *hi, t1));
  }
  return out;
}

Eigen::Matrix<double, 9, 6> PreintegrationDelta::bias_jacobians() const {
  Eigen::Matrix<double, 9, 6> j;
  j.block<3, 3>(0, 0) = dp_dbg();
  j.block<3, 3>(0, 3) = dp_dba();
  j.block<3, 3>(3, 0) = dv_dbg();
  j.block<3, 3>(3, 3) = dv_dba();
  j.block<3, 3>(6, 0) = dq_dbg();
  j.block<3, 3>(6, 3).setZero();
  return j;
}

Preintegrator::Preintegrator(const ImuSample& first, const Vec3& bg, const Vec3& ba, const WorldConfig& world)
    : last_(first), world_(world) {
  delta_.lin_bg = bg;
  delta_.lin_ba = ba;
  delta_.sample_count = 1;
}

void Preintegrator::add(const ImuSample& sample) {
  const double dt = sample.t - last_.t;
  if (!(dt > 0.0)) {
    throw Error(ErrorKind::kNonMonotonicTime, "IMU samples must strictly increase in time");
  }
  PreintegrationDelta& d = delta_;
  const Mat3 eye = Mat3::Identity();

  const Vec3 w = 0.5 * (last_.gyro + sample.gyro) - d.lin_bg;
  const Vec3 a0 = last_.accel - d.lin_ba;
  const Vec3 a1 = sample.accel - d.lin_ba;
  const Quat q1 = rot::quat_mul(d.dq, exp_map(w * dt));
  const Mat3 r0 = d.dq.toRotationMatrix();
  const Mat3 r1 = q1.toRotationMatrix();
  const Vec3 acc = 0.5 * (r0 * a0 + r1 * a1);

  const Vec3 p1 = d.dp + d.dv * dt + 0.5 * acc * dt * dt;
  const Vec3 v1 = d.dv + acc * dt;

  const Mat3 a0x = skew(a0);
  const Mat3 a1x = skew(a1);
  // Exact derivatives of the discrete step: d theta_1 = Exp(w dt)^T d theta_0 - Jr(w dt) dt d bg
  const Mat3 rot_step = exp_map(w * dt).toRotationMatrix().transpose();
  const Mat3 jr_dt = rot::right_jacobian(w * dt) * dt;
  const double dt2 = dt * dt;

  Mat15 f = Mat15::Identity();
  f.block<3, 3>(es::kP, es::kR) = -0.25 * r0 * a0x * dt2 - 0.25 * r1 * a1x * rot_step * dt2;
  f.block<3, 3>(es::kP, es::kV) = eye * dt;
  f.block<3, 3>(es::kP, es::kBg) = 0.25 * r1 * a1x * jr_dt * dt2;
  f.block<3, 3>(es::kP, es::kBa) = -0.25 * (r0 + r1) * dt2;
  f.block<3, 3>(es::kR, es::kR) = rot_step;
  f.block<3, 3>(es::kR, es::kBg) = -jr_dt;
  f.block<3, 3>(es::kV, es::kR) = -0.5 * r0 * a0x * dt - 0.5 * r1 * a1x * rot_step * dt;
  f.block<3, 3>(es::kV, es::kBg) = 0.5 * r1 * a1x * jr_dt * dt;
  f.block<3, 3>(es::kV, es::kBa) = -0.5 * (r0 + r1) * dt;

  // Noise order: accel0, gyro0, accel1, gyro1, gyro walk, accel walk.
  Eigen::Matrix<double, 15, 18> g = Eigen::Matrix<double, 15, 18>::Zero();
  g.block<3, 3>(es::kP, 0) = 0.25 * r0 * dt2;
  g.block<3, 3>(es::kP, 3) = -0.125 * r1 * a1x * dt2 * dt;
  g.block<3, 3>(es::kP, 6) = 0.25 * r1 * dt2;
  g.block<3, 3>(es::kP, 9) = g.block<3, 3>(es::kP, 3);
  g.block<3, 3>(es::kR, 3) = 0.5 * eye * dt;
  g.block<3, 3>(es::kR, 9) = 0.5 * eye * dt;
  g.block<3, 3>(es::kV, 0) = 0.5 * r0 * dt;
  g.block<3, 3>(es::kV, 3) = -0.25 * r1 * a1x * dt2;
  g.block<3, 3>(es::kV, 6) = 0.5 * r1 * dt;
  g.block<3, 3>(es::kV, 9) = g.block<3, 3>(es::kV, 3);
  g.block<3, 3>(es::kBg, 12) = eye * dt;
  g.block<3, 3>(es::kBa, 15) = eye * dt;

  // Discrete variances from continuous densities. Every sample enters two
  // midpoint steps with weight 1/2, so the white terms are doubled to keep
  // the accumulated variance equal to density^2 * T.
  const double ga = 2.0 * world_.accel_noise_density * world_.accel_noise_density / dt;
  const double gg = 2.0 * world_.gyro_noise_density * world_.gyro_noise_density / dt;
  const double wg = world_.gyro_bias_walk * world_.gyro_bias_walk / dt;
  const double wa = world_.accel_bias_walk * world_.accel_bias_walk / dt;
  Eigen::Matrix<double, 18, 1> q;
  q << Vec3::Constant(ga), Vec3::Constant(gg), Vec3::Constant(ga), Vec3::Constant(gg), Vec3::Constant(wg),
      Vec3::Constant(wa);

  d.jacobian = f * d.jacobian;
  d.cov = f * d.cov * f.transpose() + g * q.asDiagonal() * g.transpose();
  d.cov = 0.5 * (d.cov + d.cov.transpose());

  d.dp = p1;
  d.dv = v1;
  d.dq = q1;
  d.dt_total += dt;
  d.sample_count += 1;
  last_ = sample;
}

PreintegrationDelta preintegrate(std::span<const ImuSample> samples, const Vec3& bg, const Vec3& ba,
                                 const WorldConfig& world) {
  if (samples.size() < 2) {
    throw Error(ErrorKind::kInsufficientData, "preintegration needs at least two samples");
  }
  Preintegrator pre(samples.front(), bg, ba, world);
  for (std::size_t i = 1; i < samples.size(); ++i) pre.add(samples[i]);
  return pre.delta();
}

namespace {

struct CorrectedDelta {
  Vec3 dp;
  Vec3 dv;
  Quat dq;
  Vec3 dbg;
};

CorrectedDelta correct(const PreintegrationDelta& d, const ImuState& prev) {
  const Vec3 dbg = prev.bg - d.lin_bg;
  const Vec3 dba = prev.ba - d.lin_ba;
  return {d.dp + d.dp_dbg() * dbg + d.dp_dba() * dba, d.dv + d.dv_dbg() * dbg + d.dv_dba() * dba,
          rot::quat_mul(d.dq, exp_map(d.dq_dbg() * dbg)), dbg};
}

}  // namespace

Vec15 preintegration_residual(const ImuState& prev, const ImuState& curr, const PreintegrationDelta& delta,
                              const WorldConfig& world) {
  const CorrectedDelta c = correct(delta, prev);
  const double dt = delta.dt_total;
  const Mat3 rt = prev.q.toRotationMatrix().transpose();
  Vec15 r;
  r.segment<3>(es::kP) = rt * (curr.p - prev.p - prev.v * dt - 0.5 * world.gravity * dt * dt) - c.dp;
  r.segment<3>(es::kR) = log_map(curr.q.conjugate() * prev.q * c.dq);
  r.segment<3>(es::kV) = rt * (curr.v - prev.v - world.gravity * dt) - c.dv;
  r.segment<3>(es::kBg) = curr.bg - prev.bg;
  r.segment<3>(es::kBa) = curr.ba - prev.ba;
  return r;
}

void preintegration_jacobians(const ImuState& prev, const ImuState& curr, const PreintegrationDelta& delta,
                              const WorldConfig& world, Mat15* j_prev, Mat15* j_curr) {
  const CorrectedDelta c = correct(delta, prev);
  const double dt = delta.dt_total;
  const Mat3 rt = prev.q.toRotationMatrix().transpose();
  const Vec3 pos_term = rt * (curr.p - prev.p - prev.v * dt - 0.5 * world.gravity * dt * dt);
  const Vec3 vel_term = rt * (curr.v - prev.v - world.gravity * dt);
  const Quat err = curr.q.conjugate() * prev.q * c.dq;
  const Vec3 r_q = log_map(err);
  const Mat3 jr_inv = rot::right_jacobian_inv(r_q);
  const Mat3 eye = Mat3::Identity();

  if (j_prev) {
    Mat15& j = *j_prev;
    j.setZero();
    j.block<3, 3>(es::kP, es::kP) = -rt;
    j.block<3, 3>(es::kP, es::kR) = skew(pos_term);
    j.block<3, 3>(es::kP, es::kV) = -rt * dt;
    j.block<3, 3>(es::kP, es::kBg) = -delta.dp_dbg();
    j.block<3, 3>(es::kP, es::kBa) = -delta.dp_dba();

    j.block<3, 3>(es::kR, es::kR) = jr_inv * c.dq.toRotationMatrix().transpose();
    j.block<3, 3>(es::kR, es::kBg) =
        jr_inv * rot::right_jacobian(delta.dq_dbg() * c.dbg) * delta.dq_dbg();

    j.block<3, 3>(es::kV, es::kR) = skew(vel_term);
    j.block<3, 3>(es::kV, es::kV) = -rt;
    j.block<3, 3>(es::kV, es::kBg) = -delta.dv_dbg();
    j.block<3, 3>(es::kV, es::kBa) = -delta.dv_dba();

    j.block<3, 3>(es::kBg, es::kBg) = -eye;
    j.block<3, 3>(es::kBa, es::kBa) = -eye;
  }
  if (j_curr) {
    Mat15& j = *j_curr;
    j.setZero();
    j.block<3, 3>(es::kP, es::kP) = rt;
    j.block<3, 3>(es::kR, es::kR) = -jr_inv * err.toRotationMatrix().transpose();
    j.block<3, 3>(es::kV, es::kV) = rt;
    j.block<3, 3>(es::kBg, es::kBg) = eye;
    j.block<3, 3>(es::kBa, es::kBa) = eye;
  }
}

ImuState retract(const ImuState& x, const Vec15& dx) {
  ImuState out = x;
  out.p += dx.segment<3>(es::kP);
  out.q = rot::quat_mul(x.q, exp_map(dx.segment<3>(es::kR)));
  out.v += dx.segment<3>(es::kV);
  out.bg += dx.segment<3>(es::kBg);
  out.ba += dx.segment<3>(es::kBa);
  return out;
}

Vec15 local_difference(const ImuState& a, const ImuState& b) {
  Vec15 d;
  d.segment<3>(es::kP) = b.p - a.p;
  d.segment<3>(es::kR) = log_map(a.q.conjugate() * b.q);
  d.segment<3>(es::kV) = b.v - a.v;
  d.segment<3>(es::kBg) = b.bg - a.bg;
  d.segment<3>(es::kBa) = b.ba - a.ba;
  return d;
}

}  // namespace planelio
