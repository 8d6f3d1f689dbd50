#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "planelio/dataset.hpp"
#include "planelio/imu.hpp"
#include "planelio/plane.hpp"
#include "planelio/point_cloud_map.hpp"

namespace planelio::sim {

/// Convex planar polygon with a ground-truth plane id.
struct PolygonPlane {
  int id = -1;
  Vec3 n = Vec3::UnitZ();
  double d = 0.0;
  std::vector<Vec3> vertices;  ///< ordered around the boundary
};

struct WorldModel {
  std::string name;
  std::vector<PolygonPlane> planes;
  std::uint64_t seed = 0;
};

/// Canned worlds: "box" (room with pillars and a block), "corridor" (two
/// parallel walls), "corner" (two walls meeting at a right angle), and
/// "floor" (one large plane z = 0). Throws Error(kUnknownPreset).
WorldModel make_world(const std::string& preset);

/// Polygon from a plane and its vertices; n is normalized. Throws
/// Error(kDegenerateGeometry) for fewer than 3 vertices or non-planar input.
PolygonPlane make_polygon(int id, std::vector<Vec3> vertices);

enum class PathKind { kStationary, kCircle, kFigureEight, kStraight, kRich };

struct TrajectorySpec {
  PathKind path = PathKind::kCircle;
  double duration = 60.0;          ///< s
  double imu_rate = 200.0;         ///< Hz
  double lidar_rate = 10.0;        ///< Hz
  double stationary_prefix = 2.0;  ///< s at rest before motion starts
  double ramp = 3.0;               ///< s of smooth acceleration to full speed
  Vec3 center = Vec3(0.0, 0.0, 1.5);
  double radius = 5.0;   ///< m (circle), half-width (figure eight)
  double period = 20.0;  ///< s per lap; straight paths use speed instead
  double speed = 1.0;    ///< m/s for straight paths
  double vertical_amplitude = 0.3;
  double roll_amplitude = 0.05;   ///< rad
  double pitch_amplitude = 0.05;  ///< rad
  double yaw_amplitude = 0.0;     ///< rad, oscillation around the heading
  double attitude_rate = 1.3;     ///< rad/s of motion time for the attitude oscillations
};

/// Presets "stationary", "circle", "figure_eight", "straight", "rich".
/// Throws Error(kUnknownPreset). Validates duration and rates.
TrajectorySpec make_trajectory(const std::string& preset, double duration);

/// Default extrinsic used by the simulator: a small rotation and a lever arm.
Pose default_extrinsic();

struct SensorNoiseSpec {
  double lidar_range_sigma = 0.02;  ///< m
  double gyro_noise_density = 2.4e-4;
  double accel_noise_density = 1.7e-3;
  double gyro_bias_walk = 1e-5;
  double accel_bias_walk = 1e-4;
  Vec3 gyro_bias = Vec3(2e-3, -1.5e-3, 1e-3);
  Vec3 accel_bias = Vec3(3e-2, -2e-2, 2.5e-2);
  Pose extrinsic = default_extrinsic();  ///< LiDAR -> body
  double t_d = 0.0;  ///< recorded LiDAR time = true time - t_d
  int points_per_frame = 1500;
  double max_range = 80.0;
  double cone_full_angle_deg = 70.0;

  /// Zero noise and zero biases with the same geometry.
  static SensorNoiseSpec noise_free();
};

/// Exact kinematics at time t.
struct Kinematics {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 a = Vec3::Zero();  ///< world acceleration
  Quat q = Quat::Identity();
  Vec3 omega_b = Vec3::Zero();  ///< body angular rate
};

Kinematics evaluate(const TrajectorySpec& spec, double t);

struct ImuData {
  std::vector<ImuSample> samples;
  std::vector<ImuState> truth;  ///< one per sample, biases included
};

ImuData generate_imu(const TrajectorySpec& traj, const SensorNoiseSpec& noise, const WorldConfig& world,
                     std::uint64_t seed);

/// First polygon hit along a ray; returns the range or a negative value.
double cast_ray(const WorldModel& world, const Vec3& origin, const Vec3& dir, int* plane_id);

/// Unit direction of ray `index` of the non-repeating scan pattern, LiDAR frame.
Vec3 scan_direction(std::uint64_t index, double cone_full_angle_deg);

/// Frames at lidar_rate over [0, duration - 1/lidar_rate]; each point
/// labeled with its plane id. Points are raw (not de-skewed).
std::vector<LidarFrame> generate_lidar(const TrajectorySpec& traj, const WorldModel& world,
                                       const SensorNoiseSpec& noise, std::uint64_t seed);

/// Whole dataset: IMU, LiDAR and ground truth at the IMU rate.
Dataset simulate(const std::string& world_preset, const TrajectorySpec& traj, const SensorNoiseSpec& noise,
                 const WorldConfig& world, std::uint64_t seed);

}  // namespace planelio::sim
