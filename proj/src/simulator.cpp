#include "planelio/simulator.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "planelio/error.hpp"

namespace planelio::sim {
namespace {

constexpr double kPi = std::numbers::pi;

void add_rect(WorldModel& w, const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  w.planes.push_back(make_polygon(static_cast<int>(w.planes.size()), {a, b, c, d}));
}

// Axis-aligned box faces; `floor`/`top` select the horizontal faces.
void add_box(WorldModel& w, const Vec3& lo, const Vec3& hi, bool floor, bool top) {
  const double x0 = lo.x(), y0 = lo.y(), z0 = lo.z(), x1 = hi.x(), y1 = hi.y(), z1 = hi.z();
  add_rect(w, {x0, y0, z0}, {x0, y1, z0}, {x0, y1, z1}, {x0, y0, z1});
  add_rect(w, {x1, y0, z0}, {x1, y1, z0}, {x1, y1, z1}, {x1, y0, z1});
  add_rect(w, {x0, y0, z0}, {x1, y0, z0}, {x1, y0, z1}, {x0, y0, z1});
  add_rect(w, {x0, y1, z0}, {x1, y1, z0}, {x1, y1, z1}, {x0, y1, z1});
  if (floor) add_rect(w, {x0, y0, z0}, {x1, y0, z0}, {x1, y1, z0}, {x0, y1, z0});
  if (top) add_rect(w, {x0, y0, z1}, {x1, y0, z1}, {x1, y1, z1}, {x0, y1, z1});
}

struct MotionTime {
  double value = 0.0;  // T(t)
  double rate = 0.0;   // dT/dt
  double accel = 0.0;  // d2T/dt2
};

// Rest, then a quintic smoothstep speed ramp to unit rate.
MotionTime motion_time(const TrajectorySpec& spec, double t) {
  MotionTime m;
  const double s = t - spec.stationary_prefix;
  if (s <= 0.0) return m;
  if (spec.ramp <= 0.0) return {s, 1.0, 0.0};
  const double x = s / spec.ramp;
  if (x >= 1.0) return {0.5 * spec.ramp + (s - spec.ramp), 1.0, 0.0};
  const double x2 = x * x, x3 = x2 * x, x4 = x3 * x;
  m.value = spec.ramp * (x4 * x2 - 3.0 * x4 * x + 2.5 * x4);
  m.rate = 6.0 * x4 * x - 15.0 * x4 + 10.0 * x3;
  m.accel = 30.0 * x2 * (x - 1.0) * (x - 1.0) / spec.ramp;
  return m;
}

struct PathPoint {
  Vec3 f, df, ddf;
};

PathPoint path_point(const TrajectorySpec& spec, double th) {
  const double r = spec.radius;
  const double a = spec.vertical_amplitude;
  PathPoint p;
  switch (spec.path) {
    case PathKind::kStationary:
      p.f = Vec3::Zero();
      p.df = Vec3::UnitX();
      p.ddf = Vec3::Zero();
      break;
    case PathKind::kCircle:
    case PathKind::kRich:
      p.f = {r * std::cos(th), r * std::sin(th), a * std::sin(2.0 * th)};
      p.df = {-r * std::sin(th), r * std::cos(th), 2.0 * a * std::cos(2.0 * th)};
      p.ddf = {-r * std::cos(th), -r * std::sin(th), -4.0 * a * std::sin(2.0 * th)};
      break;
    case PathKind::kFigureEight:
      p.f = {r * std::sin(th), 0.5 * r * std::sin(2.0 * th), a * std::sin(th)};
      p.df = {r * std::cos(th), r * std::cos(2.0 * th), a * std::cos(th)};
      p.ddf = {-r * std::sin(th), -2.0 * r * std::sin(2.0 * th), -a * std::sin(th)};
      break;
    case PathKind::kStraight:
      p.f = {th, 0.0, 0.0};
      p.df = Vec3::UnitX();
      p.ddf = Vec3::Zero();
      break;
  }
  p.f += spec.center;
  return p;
}

double path_rate(const TrajectorySpec& spec) {
  switch (spec.path) {
    case PathKind::kStationary:
      return 0.0;
    case PathKind::kStraight:
      return spec.speed;
    default:
      return 2.0 * kPi / spec.period;
  }
}

void validate(const TrajectorySpec& spec) {
  if (!(spec.duration > 0.0) || !(spec.imu_rate > 0.0) || !(spec.lidar_rate > 0.0)) {
    throw Error(ErrorKind::kNonPositiveInput, "trajectory duration and rates must be positive");
  }
}

}  // namespace

PolygonPlane make_polygon(int id, std::vector<Vec3> vertices) {
  if (vertices.size() < 3) throw Error(ErrorKind::kDegenerateGeometry, "polygon needs three vertices");
  Vec3 n = Vec3::Zero();
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    const Vec3& a = vertices[i];
    const Vec3& b = vertices[(i + 1) % vertices.size()];
    n += (a - vertices[0]).cross(b - vertices[0]);
  }
  if (n.norm() < 1e-12) throw Error(ErrorKind::kDegenerateGeometry, "polygon has no area");
  n.normalize();
  const double d = -n.dot(vertices[0]);
  for (const Vec3& v : vertices) {
    if (std::abs(n.dot(v) + d) > 1e-9) throw Error(ErrorKind::kDegenerateGeometry, "polygon is not planar");
  }
  return {id, n, d, std::move(vertices)};
}

WorldModel make_world(const std::string& preset) {
  WorldModel w;
  w.name = preset;
  if (preset == "box") {
    add_box(w, {-10.0, -7.0, 0.0}, {10.0, 7.0, 4.0}, true, true);
    add_box(w, {2.0, -0.5, 0.0}, {3.0, 0.5, 4.0}, false, false);
    add_box(w, {7.0, 4.0, 0.0}, {8.0, 5.0, 4.0}, false, false);
    add_box(w, {-7.0, -5.0, 0.0}, {-5.0, -4.0, 1.0}, false, true);
  } else if (preset == "corridor") {
    add_rect(w, {-50.0, -1.5, -1.0}, {1000.0, -1.5, -1.0}, {1000.0, -1.5, 4.0}, {-50.0, -1.5, 4.0});
    add_rect(w, {-50.0, 1.5, -1.0}, {1000.0, 1.5, -1.0}, {1000.0, 1.5, 4.0}, {-50.0, 1.5, 4.0});
  } else if (preset == "corner") {
    add_rect(w, {8.0, -50.0, -1.0}, {8.0, 8.0, -1.0}, {8.0, 8.0, 5.0}, {8.0, -50.0, 5.0});
    add_rect(w, {-50.0, 8.0, -1.0}, {8.0, 8.0, -1.0}, {8.0, 8.0, 5.0}, {-50.0, 8.0, 5.0});
  } else if (preset == "floor") {
    add_rect(w, {-1000.0, -1000.0, 0.0}, {1000.0, -1000.0, 0.0}, {1000.0, 1000.0, 0.0}, {-1000.0, 1000.0, 0.0});
  } else {
    throw Error(ErrorKind::kUnknownPreset, "unknown world preset '" + preset + "'");
  }
  return w;
}

TrajectorySpec make_trajectory(const std::string& preset, double duration) {
  TrajectorySpec s;
  s.duration = duration;
  if (preset == "stationary") {
    s.path = PathKind::kStationary;
    s.roll_amplitude = s.pitch_amplitude = s.yaw_amplitude = 0.0;
  } else if (preset == "circle") {
    s.path = PathKind::kCircle;
  } else if (preset == "figure_eight") {
    s.path = PathKind::kFigureEight;
    s.period = 30.0;
  } else if (preset == "straight") {
    s.path = PathKind::kStraight;
  } else if (preset == "rich") {
    s.path = PathKind::kRich;
    s.radius = 4.0;
    s.period = 16.0;
    s.vertical_amplitude = 0.4;
    s.roll_amplitude = 0.25;
    s.pitch_amplitude = 0.25;
    s.yaw_amplitude = 0.4;
    s.attitude_rate = 1.1;
  } else {
    throw Error(ErrorKind::kUnknownPreset, "unknown trajectory preset '" + preset + "'");
  }
  validate(s);
  return s;
}

Pose default_extrinsic() { return {Vec3(0.1, 0.0, 0.05), rot::from_rpy(0.01, -0.02, 0.015)}; }

SensorNoiseSpec SensorNoiseSpec::noise_free() {
  SensorNoiseSpec n;
  n.lidar_range_sigma = 0.0;
  n.gyro_noise_density = 0.0;
  n.accel_noise_density = 0.0;
  n.gyro_bias_walk = 0.0;
  n.accel_bias_walk = 0.0;
  n.gyro_bias.setZero();
  n.accel_bias.setZero();
  return n;
}

Kinematics evaluate(const TrajectorySpec& spec, double t) {
  const MotionTime m = motion_time(spec, t);
  const double w = path_rate(spec);
  const double th = w * m.value;
  const double th1 = w * m.rate;
  const double th2 = w * m.accel;
  const PathPoint pp = path_point(spec, th);

  Kinematics k;
  k.p = pp.f;
  k.v = pp.df * th1;
  k.a = pp.ddf * th1 * th1 + pp.df * th2;

  // Heading follows the horizontal tangent.
  const double fx = pp.df.x(), fy = pp.df.y();
  const double heading = std::atan2(fy, fx);
  const double heading_rate = (fx * pp.ddf.y() - fy * pp.ddf.x()) / (fx * fx + fy * fy) * th1;

  const double c = spec.attitude_rate;
  const double T = m.value;
  const double roll = spec.roll_amplitude * std::sin(c * T);
  const double roll_rate = spec.roll_amplitude * c * std::cos(c * T) * m.rate;
  const double pitch = spec.pitch_amplitude * std::sin(0.77 * c * T);
  const double pitch_rate = spec.pitch_amplitude * 0.77 * c * std::cos(0.77 * c * T) * m.rate;
  const double yaw = heading + spec.yaw_amplitude * std::sin(0.53 * c * T);
  const double yaw_rate = heading_rate + spec.yaw_amplitude * 0.53 * c * std::cos(0.53 * c * T) * m.rate;

  k.q = rot::from_rpy(roll, pitch, yaw);
  const double sr = std::sin(roll), cr = std::cos(roll);
  const double sp = std::sin(pitch), cp = std::cos(pitch);
  k.omega_b = {roll_rate - yaw_rate * sp, pitch_rate * cr + yaw_rate * sr * cp, -pitch_rate * sr + yaw_rate * cr * cp};
  return k;
}

ImuData generate_imu(const TrajectorySpec& traj, const SensorNoiseSpec& noise, const WorldConfig& world,
                     std::uint64_t seed) {
  validate(traj);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto draw = [&] { return Vec3(gauss(rng), gauss(rng), gauss(rng)); };

  const double dt = 1.0 / traj.imu_rate;
  const double sg = noise.gyro_noise_density * std::sqrt(traj.imu_rate);
  const double sa = noise.accel_noise_density * std::sqrt(traj.imu_rate);
  const double wg = noise.gyro_bias_walk * std::sqrt(dt);
  const double wa = noise.accel_bias_walk * std::sqrt(dt);
  const auto count = static_cast<std::size_t>(std::floor(traj.duration * traj.imu_rate + 1e-9)) + 1;

  ImuData out;
  out.samples.reserve(count);
  out.truth.reserve(count);
  Vec3 bg = noise.gyro_bias;
  Vec3 ba = noise.accel_bias;
  for (std::size_t i = 0; i < count; ++i) {
    const double t = static_cast<double>(i) * dt;
    const Kinematics k = evaluate(traj, t);
    ImuSample s;
    s.t = t;
    s.gyro = k.omega_b + bg + sg * draw();
    s.accel = k.q.conjugate() * (k.a - world.gravity) + ba + sa * draw();
    out.samples.push_back(s);
    out.truth.push_back({t, k.p, k.q, k.v, bg, ba});
    bg += wg * draw();
    ba += wa * draw();
  }
  return out;
}

double cast_ray(const WorldModel& world, const Vec3& origin, const Vec3& dir, int* plane_id) {
  double best = -1.0;
  for (const PolygonPlane& poly : world.planes) {
    const double denom = poly.n.dot(dir);
    if (std::abs(denom) < 1e-12) continue;
    const double range = -(poly.n.dot(origin) + poly.d) / denom;
    if (range <= 1e-6 || (best > 0.0 && range >= best)) continue;
    const Vec3 x = origin + range * dir;
    bool inside = true;
    int sign = 0;
    const std::size_t m = poly.vertices.size();
    for (std::size_t i = 0; i < m && inside; ++i) {
      const Vec3& a = poly.vertices[i];
      const Vec3& b = poly.vertices[(i + 1) % m];
      const double s = (b - a).cross(x - a).dot(poly.n);
      if (std::abs(s) < 1e-12) continue;
      const int sg = s > 0.0 ? 1 : -1;
      if (sign == 0) sign = sg;
      inside = sg == sign;
    }
    if (!inside) continue;
    best = range;
    if (plane_id) *plane_id = poly.id;
  }
  return best;
}

Vec3 scan_direction(std::uint64_t index, double cone_full_angle_deg) {
  // Golden-angle azimuth with a plastic-ratio radial sequence: uniform over
  // the cap and never repeating.
  constexpr double kGoldenAngle = kPi * (3.0 - 2.23606797749978969641);
  constexpr double kInvPlastic = 0.75487766624669276005;
  const double j = static_cast<double>(index);
  const double u = std::fmod(0.5 + j * kInvPlastic, 1.0);
  const double az = std::fmod(j * kGoldenAngle, 2.0 * kPi);
  const double half = 0.5 * cone_full_angle_deg * kPi / 180.0;
  const double cos_a = 1.0 - u * (1.0 - std::cos(half));
  const double sin_a = std::sqrt(std::max(0.0, 1.0 - cos_a * cos_a));
  return {cos_a, sin_a * std::cos(az), sin_a * std::sin(az)};
}

std::vector<LidarFrame> generate_lidar(const TrajectorySpec& traj, const WorldModel& world,
                                       const SensorNoiseSpec& noise, std::uint64_t seed) {
  validate(traj);
  const double period = 1.0 / traj.lidar_rate;
  const int n = noise.points_per_frame;
  std::vector<LidarFrame> frames;
  for (std::uint64_t f = 0;; ++f) {
    const double tf = static_cast<double>(f) * period;
    if (tf + period > traj.duration + 1e-9) break;
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(f), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> gauss(0.0, 1.0);

    LidarFrame frame;
    frame.t = tf - noise.t_d;
    for (int i = 0; i < n; ++i) {
      const double offset = (static_cast<double>(i) + 0.5) / static_cast<double>(n) * period;
      const Kinematics k = evaluate(traj, tf + offset);
      const Pose lidar = Pose{k.p, k.q} * noise.extrinsic;
      const Vec3 dir = scan_direction(f * static_cast<std::uint64_t>(n) + static_cast<std::uint64_t>(i),
                                      noise.cone_full_angle_deg);
      int id = -1;
      const double range = cast_ray(world, lidar.p, lidar.q * dir, &id);
      // Range noise is truncated at 3 sigma so every point stays inside the
      // 3 sigma / cos(incidence) slab around its plane.
      double eps = gauss(rng);
      while (std::abs(eps) > 3.0) eps = gauss(rng);
      if (range <= 0.0 || range > noise.max_range) continue;
      const double measured = range + noise.lidar_range_sigma * eps;
      if (measured <= 0.0) continue;
      frame.points.push_back({measured * dir, offset});
      frame.labels.push_back(id);
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

Dataset simulate(const std::string& world_preset, const TrajectorySpec& traj, const SensorNoiseSpec& noise,
                 const WorldConfig& world, std::uint64_t seed) {
  WorldModel model = make_world(world_preset);
  model.seed = seed;
  ImuData imu = generate_imu(traj, noise, world, seed);
  Dataset ds;
  ds.frames = generate_lidar(traj, model, noise, seed ^ 0x9e3779b97f4a7c15ULL);
  ds.truth.reserve(imu.truth.size());
  for (const ImuState& s : imu.truth) ds.truth.push_back({s.t, s.pose()});
  ds.imu = std::move(imu.samples);
  return ds;
}

}  // namespace planelio::sim
