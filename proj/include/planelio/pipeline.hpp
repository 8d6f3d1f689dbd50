#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "planelio/association.hpp"
#include "planelio/dataset.hpp"
#include "planelio/estimator.hpp"
#include "planelio/imu.hpp"
#include "planelio/point_cloud_map.hpp"

namespace planelio {

struct RunConfig {
  EstimatorConfig estimator;
  AssociationConfig association;
  KeyframeSelectionConfig keyframe;
  VoxelFilterConfig voxel;
  StaticInitConfig init;
  WorldConfig world;
  double init_duration = 1.0;  ///< s of leading data used for static initialization
  double t_d = 0.0;            ///< s, added to every LiDAR timestamp
  Pose extrinsic;              ///< initial LiDAR -> body estimate
  PriorSigmas prior;           ///< first-node and extrinsic prior
  /// Rebuild window keyframe maps once the extrinsic estimate moves this far
  /// from the value they were built with. Zero disables.
  double rebuild_rotation_deg = 0.02;
  double rebuild_translation = 2e-3;  ///< m
  /// The extrinsic stays fixed until the window has rotated about every
  /// axis, measured by the smallest eigenvalue of sum (I - R_i)^T (I - R_i)
  /// against 2 (1 - cos angle). Latches once reached.
  double extrinsic_min_rotation_deg = 3.0;
  /// ... and until the window pins the lever arm to this worst-axis std, m.
  double extrinsic_release_std = 0.06;
};

/// Applies one `key = value` setting. Throws Error(kInvalidConfig).
void apply_config_entry(RunConfig& config, const std::string& key, const std::string& value);

/// Reads `key = value` lines; `#` starts a comment. Throws Error(kInvalidConfig)
/// or Error(kIoFailure).
void load_config_file(RunConfig& config, const std::filesystem::path& path);

/// Throws Error(kInvalidConfig) when a setting is out of range.
void validate(const RunConfig& config);

struct KeyframeRecord {
  int id = -1;
  double t = 0.0;
  int window_nodes = 0;
  int new_ba_factors = 0;
  int new_tagged = 0;
  int ba_factors = 0;  ///< active after optimization
  int preint_factors = 0;
  int removed = 0;
  int removed_tagged = 0;
  int iterations_step1 = 0;
  int iterations_step2 = 0;
  double final_cost = 0.0;
  double map_ms = 0.0;
  double association_ms = 0.0;
  double optimization_ms = 0.0;
  double marginalization_ms = 0.0;
  Vec3 position_std = Vec3::Zero();  ///< world axes
  double yaw_std = 0.0;              ///< rad
  double extrinsic_position_std = 0.0;  ///< m, worst axis, before this keyframe's solve
  double extrinsic_rotation_std = 0.0;  ///< rad, worst axis
  bool extrinsic_free = false;
  AssociationStats association;
  int pure_associations = 0;  ///< label-pure, when labels are present
  int labeled_associations = 0;
};

struct RunResult {
  TrajectoryRecord trajectory;
  std::vector<KeyframeRecord> keyframes;
  Pose final_extrinsic;
  int frames_processed = 0;
  double total_ms = 0.0;
  double data_duration = 0.0;  ///< s of LiDAR data processed
};

/// Sliding-window estimator driven frame by frame.
class Pipeline {
 public:
  Pipeline(RunConfig config, std::vector<ImuSample> imu);

  /// Static initialization on the leading segment. Throws
  /// Error(kInitializationFailure).
  void initialize();
  bool initialized() const { return initialized_; }

  /// De-skews, buffers and, on keyframes, runs association, optimization
  /// and marginalization. Returns false when the frame was skipped.
  bool process_frame(const LidarFrame& frame);

  /// Appends the remaining window poses to the trajectory.
  RunResult finish();

  const WindowState& window() const { return window_; }
  const std::vector<BAFactor>& ba_factors() const { return ba_; }
  const std::vector<PreintFactor>& preint_factors() const { return preint_; }
  const std::vector<KeyframeRecord>& records() const { return result_.keyframes; }
  const RunConfig& config() const { return config_; }

  /// Called with the factors created for each new keyframe before they
  /// join the window (fault injection in tests).
  std::function<void(std::vector<BAFactor>&, const WindowState&)> on_new_factors;

 private:
  struct KeyframeSource {
    std::vector<LidarFrame> raw;     ///< frames with corrected timestamps
    std::vector<ImuState> ins;       ///< INS states covering them
    Pose extrinsic_at_build;
  };

  void extend_ins(double t_end);
  ImuState propagate_to(const ImuState& from, double t) const;
  void process_keyframe(const ImuState& node_state, std::shared_ptr<const Keyframe> keyframe,
                        KeyframeSource source);
  void rebuild_maps_if_needed();
  std::shared_ptr<const Keyframe> build_keyframe(const KeyframeSource& source, double t) const;

  RunConfig config_;
  std::vector<ImuSample> imu_;
  bool initialized_ = false;
  ImuState anchor_;
  std::vector<ImuState> ins_;
  std::vector<LidarFrame> pending_;  ///< raw frames since the last keyframe
  double last_keyframe_t_ = 0.0;

  WindowState window_;
  std::vector<BAFactor> ba_;
  std::vector<PreintFactor> preint_;
  std::map<int, std::shared_ptr<const Keyframe>> keyframes_;
  std::map<int, KeyframeSource> sources_;
  int next_id_ = 0;
  bool extrinsic_excited_ = false;
  RunResult result_;
};

/// Runs the whole dataset. Throws Error(kInitializationFailure),
/// Error(kSolverDiverged) and dataset errors.
RunResult run_pipeline(const Dataset& dataset, const RunConfig& config,
                       const std::function<void(Pipeline&)>& setup = {});

}  // namespace planelio
