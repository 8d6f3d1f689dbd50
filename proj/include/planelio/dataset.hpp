#pragma once

#include <filesystem>
#include <vector>

#include "planelio/imu.hpp"
#include "planelio/point_cloud_map.hpp"

namespace planelio {

struct TimedPose {
  double t = 0.0;
  Pose pose;
};

using TrajectoryRecord = std::vector<TimedPose>;

struct Dataset {
  std::vector<ImuSample> imu;
  std::vector<LidarFrame> frames;
  TrajectoryRecord truth;
};

// Text formats, 9 significant digits:
//   imu.csv          t,gx,gy,gz,ax,ay,az
//   lidar.csv        frame_id,frame_t,point_t_offset,x,y,z
//   labels.csv       plane_id, one row per lidar.csv row (simulated data only)
//   groundtruth.tum  t px py pz qx qy qz qw

void write_imu_csv(const std::filesystem::path& path, const std::vector<ImuSample>& samples);
std::vector<ImuSample> read_imu_csv(const std::filesystem::path& path);

void write_lidar_csv(const std::filesystem::path& path, const std::vector<LidarFrame>& frames);
/// Frames grouped by frame_id in file order.
std::vector<LidarFrame> read_lidar_csv(const std::filesystem::path& path);

void write_labels_csv(const std::filesystem::path& path, const std::vector<LidarFrame>& frames);
/// Attaches labels to already-read frames; row count must match.
void read_labels_csv(const std::filesystem::path& path, std::vector<LidarFrame>& frames);

void write_tum(const std::filesystem::path& path, const TrajectoryRecord& trajectory);
/// Throws Error(kDatasetError) on malformed rows or non-increasing time.
TrajectoryRecord read_tum(const std::filesystem::path& path);

/// Writes imu.csv, lidar.csv, groundtruth.tum and, when any frame carries
/// labels, labels.csv. Throws Error(kIoFailure).
void write_dataset(const Dataset& dataset, const std::filesystem::path& directory);

/// Reads a dataset directory. groundtruth.tum and labels.csv are optional.
/// Throws Error(kDatasetError).
Dataset read_dataset(const std::filesystem::path& directory);

}  // namespace planelio
