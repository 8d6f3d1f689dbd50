#pragma once

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "planelio/imu.hpp"
#include "planelio/kdtree.hpp"

namespace planelio {

struct LidarPoint {
  Vec3 xyz = Vec3::Zero();  ///< LiDAR frame, m
  double t_offset = 0.0;    ///< s after the frame timestamp
};

struct LidarFrame {
  double t = 0.0;
  std::vector<LidarPoint> points;
  /// Ground-truth plane id per point when the data is simulated; empty
  /// otherwise. Carried through de-skew and map building for auditing only.
  std::vector<int> labels;
};

struct VoxelFilterConfig {
  double voxel_size = 0.1;  ///< m
};

struct KeyframeSelectionConfig {
  double translation = 0.3;    ///< m
  double rotation_deg = 10.0;  ///< degrees
  double elapsed = 1.0;        ///< s
};

/// One keyframe: its de-skewed scan plus the downsampled map of every frame
/// since the previous keyframe, all in this keyframe's LiDAR frame.
struct Keyframe {
  double t = 0.0;
  int node_index = -1;
  std::vector<Vec3> raw_points;
  std::shared_ptr<const KdTree> spatial_index;
  std::vector<int> map_labels;  ///< per local_map point; -1 where a voxel mixed labels

  const std::vector<Vec3>& local_map() const { return spatial_index->points(); }
};

/// Centroid-per-voxel downsampling; output order follows first occupancy.
/// With labels, each output point gets the common label of its voxel or -1.
std::vector<Vec3> voxel_downsample(std::span<const Vec3> points, double voxel_size,
                                   std::span<const int> labels = {}, std::vector<int>* out_labels = nullptr);

/// Re-expresses every point in the LiDAR frame at frame.t using the pose
/// interpolated at its own sample time. `extrinsic` maps LiDAR to body.
/// Throws Error(kTrajectoryGap) when the trajectory does not cover the scan.
LidarFrame deskew(const LidarFrame& frame, std::span<const ImuState> trajectory, const Pose& extrinsic);

/// Inverse of deskew.
LidarFrame reskew(const LidarFrame& frame, std::span<const ImuState> trajectory, const Pose& extrinsic);

bool is_new_keyframe(const Pose& last_keyframe, const Pose& current, double elapsed,
                     const KeyframeSelectionConfig& config = {});

struct PosedFrame {
  Pose body_pose;  ///< INS prior pose of the body at frame.t
  LidarFrame frame;  ///< de-skewed
};

/// Projects every frame into the keyframe's LiDAR frame, merges, downsamples
/// and indexes. Throws Error(kEmptyMap) when no point survives.
Keyframe accumulate_map(const Pose& keyframe_body_pose, std::span<const PosedFrame> frames,
                        const Pose& extrinsic, const VoxelFilterConfig& filter);

/// Exact k nearest map points to a query in the keyframe's LiDAR frame.
std::vector<Neighbor> knn(const Keyframe& keyframe, const Vec3& query, std::size_t k);

}  // namespace planelio
