#include "planelio/point_cloud_map.hpp"

#include <cmath>
#include <numbers>
#include <unordered_map>

#include "planelio/error.hpp"
#include "planelio/kernels.hpp"

namespace planelio {
namespace {

struct VoxelKey {
  std::int64_t x, y, z;
  bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 73856093ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 19349663ULL;
    h ^= static_cast<std::uint64_t>(k.z) * 83492791ULL;
    return static_cast<std::size_t>(h);
  }
};

struct VoxelAccum {
  Vec3 sum = Vec3::Zero();
  std::size_t count = 0;
  int label = -2;  // -2: none seen yet
};

}  // namespace

std::vector<Vec3> voxel_downsample(std::span<const Vec3> points, double voxel_size, std::span<const int> labels,
                                   std::vector<int>* out_labels) {
  if (!(voxel_size > 0.0)) throw Error(ErrorKind::kInvalidConfig, "voxel size must be positive");
  const bool with_labels = !labels.empty() && labels.size() == points.size();
  std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> slot;
  slot.reserve(points.size());
  std::vector<VoxelAccum> voxels;
  const double inv = 1.0 / voxel_size;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3& p = points[i];
    const VoxelKey key{static_cast<std::int64_t>(std::floor(p.x() * inv)),
                       static_cast<std::int64_t>(std::floor(p.y() * inv)),
                       static_cast<std::int64_t>(std::floor(p.z() * inv))};
    auto [it, inserted] = slot.try_emplace(key, voxels.size());
    if (inserted) voxels.emplace_back();
    VoxelAccum& v = voxels[it->second];
    v.sum += p;
    v.count += 1;
    if (with_labels) {
      if (v.label == -2) {
        v.label = labels[i];
      } else if (v.label != labels[i]) {
        v.label = -1;
      }
    }
  }
  std::vector<Vec3> out;
  out.reserve(voxels.size());
  if (out_labels) out_labels->clear();
  for (const VoxelAccum& v : voxels) {
    out.push_back(v.sum / static_cast<double>(v.count));
    if (out_labels && with_labels) out_labels->push_back(v.label);
  }
  return out;
}

namespace {

LidarFrame reproject(const LidarFrame& frame, std::span<const ImuState> trajectory, const Pose& extrinsic,
                     bool forward) {
  double max_offset = 0.0;
  for (const LidarPoint& p : frame.points) max_offset = std::max(max_offset, p.t_offset);
  if (trajectory.empty() || frame.t < trajectory.front().t || frame.t + max_offset > trajectory.back().t) {
    throw Error(ErrorKind::kTrajectoryGap, "trajectory does not cover the scan");
  }
  const Pose lidar_at_frame = interpolate_pose(trajectory, frame.t) * extrinsic;
  const Pose frame_inv = lidar_at_frame.inverse();
  LidarFrame out = frame;
  for (LidarPoint& p : out.points) {
    const Pose lidar_at_point = interpolate_pose(trajectory, frame.t + p.t_offset) * extrinsic;
    const Pose rel = frame_inv * lidar_at_point;  // point-time frame -> frame-time frame
    p.xyz = forward ? rel * p.xyz : rel.inverse() * p.xyz;
  }
  return out;
}

}  // namespace

LidarFrame deskew(const LidarFrame& frame, std::span<const ImuState> trajectory, const Pose& extrinsic) {
  return reproject(frame, trajectory, extrinsic, true);
}

LidarFrame reskew(const LidarFrame& frame, std::span<const ImuState> trajectory, const Pose& extrinsic) {
  return reproject(frame, trajectory, extrinsic, false);
}

bool is_new_keyframe(const Pose& last_keyframe, const Pose& current, double elapsed,
                     const KeyframeSelectionConfig& config) {
  const double translation = (current.p - last_keyframe.p).norm();
  const double rotation = rot::angle(last_keyframe.q.conjugate() * current.q);
  return translation > config.translation || rotation > config.rotation_deg * std::numbers::pi / 180.0 ||
         elapsed > config.elapsed;
}

Keyframe accumulate_map(const Pose& keyframe_body_pose, std::span<const PosedFrame> frames, const Pose& extrinsic,
                        const VoxelFilterConfig& filter) {
  const Pose keyframe_lidar_inv = (keyframe_body_pose * extrinsic).inverse();
  std::vector<Vec3> merged;
  std::vector<int> labels;
  bool with_labels = true;
  std::size_t total = 0;
  for (const PosedFrame& f : frames) {
    total += f.frame.points.size();
    with_labels = with_labels && f.frame.labels.size() == f.frame.points.size();
  }
  merged.reserve(total);
  for (const PosedFrame& f : frames) {
    const Pose rel = keyframe_lidar_inv * (f.body_pose * extrinsic);
    const std::size_t start = merged.size();
    for (const LidarPoint& p : f.frame.points) merged.push_back(p.xyz);
    std::span<Vec3> block(merged.data() + start, f.frame.points.size());
    kernels::transform_points(block, rel.q.toRotationMatrix(), rel.p, block);
    if (with_labels) labels.insert(labels.end(), f.frame.labels.begin(), f.frame.labels.end());
  }
  Keyframe kf;
  std::vector<Vec3> map = voxel_downsample(merged, filter.voxel_size, labels, &kf.map_labels);
  if (map.empty()) throw Error(ErrorKind::kEmptyMap, "keyframe map has no points");
  kf.spatial_index = std::make_shared<const KdTree>(std::move(map));
  return kf;
}

std::vector<Neighbor> knn(const Keyframe& keyframe, const Vec3& query, std::size_t k) {
  return keyframe.spatial_index->knn(query, k);
}

}  // namespace planelio
