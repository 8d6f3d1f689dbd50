#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "planelio/plane.hpp"
#include "planelio/point_cloud_map.hpp"

namespace planelio {

enum class CovarianceMode { kAdaptive, kFixed };

struct AssociationConfig {
  double max_neighbor_radius = 1.0;  ///< m, farthest of the five neighbours
  double sigma_eps_f2f = 0.05;       ///< m, point-to-plane gate is 3 sigma
  double thickness_cap = 0.0025;     ///< m^2
  int selection_index = 0;           ///< which of the sorted neighbours becomes the same-plane point
  int min_members = 5;
  double variance_floor = 1e-8;      ///< m^4
  CovarianceMode covariance_mode = CovarianceMode::kAdaptive;
  double fixed_sigma_eps = 0.05;     ///< m, used in kFixed mode
  double source_voxel_size = 0.3;    ///< m, thinning grid for source points; 0 keeps all
  int max_source_points = 150;       ///< 0 means unlimited
};

inline constexpr int kNeighborCount = 5;

/// A keyframe in the sliding window together with its current pose estimate.
struct PosedKeyframe {
  int id = -1;
  Pose body_pose;
  const Keyframe* keyframe = nullptr;
};

struct F2FMatch {
  Vec3 source_point = Vec3::Zero();  ///< latest keyframe LiDAR frame
  int target_keyframe = -1;
  std::array<Vec3, kNeighborCount> neighbors{};  ///< target LiDAR frame, nearest first
  std::array<std::uint32_t, kNeighborCount> neighbor_indices{};
  Plane fitted_plane;
  double thickness = 0.0;  ///< plane thickness of the five neighbours
};

enum class MatchFailure { kNone, kRadius, kDegenerate, kDistance, kThickness };

/// Projects a latest-keyframe point into the target map, fits a plane to its
/// five nearest neighbours and validates the match. Returns std::nullopt on
/// a soft failure (reason in *why). Throws Error(kMapTooSmall) when the
/// target map has fewer than five points.
std::optional<F2FMatch> f2f_associate(const Vec3& point, const Pose& latest_body_pose, const Keyframe& target,
                                      int target_id, const Pose& target_body_pose, const Pose& extrinsic,
                                      const AssociationConfig& config, MatchFailure* why = nullptr);

struct PlaneObservation {
  int keyframe_id = -1;
  Vec3 point = Vec3::Zero();  ///< that keyframe's LiDAR frame
  int label = -1;             ///< simulator plane id when known
};

/// One multi-keyframe plane-point constraint.
class SamePlaneAssociation {
 public:
  /// Validates: at least five members, distinct keyframes, exactly one
  /// observation from latest_id, positive variance. Throws
  /// std::invalid_argument otherwise.
  SamePlaneAssociation(std::vector<PlaneObservation> observations, int latest_id, double variance);

  const std::vector<PlaneObservation>& observations() const { return observations_; }
  int member_count() const { return static_cast<int>(observations_.size()); }
  int latest_id() const { return latest_id_; }
  double variance() const { return variance_; }
  void set_variance(double variance);
  /// Replaces one observation's point, keeping its keyframe (test fixtures).
  void displace(std::size_t index, const Vec3& point);

 private:
  std::vector<PlaneObservation> observations_;
  int latest_id_;
  double variance_;
};

/// Mean of squared thicknesses over the contributing keyframes, floored.
double adaptive_covariance(std::span<const double> thicknesses, double variance_floor = 1e-8);

/// Projects the observations to the world frame, fits a plane and drops
/// those farther than 3 * sigma_w from it. Single pass. Throws
/// Error(kDegenerateGeometry) when the plane fit fails.
std::vector<PlaneObservation> cull_outliers(std::span<const PlaneObservation> observations,
                                            std::span<const PosedKeyframe> window, const Pose& extrinsic,
                                            double sigma_w);

/// Same-plane set from one source point's F2F matches. Returns std::nullopt
/// when culling or the member minimum rejects it.
std::optional<SamePlaneAssociation> build_same_plane(const Vec3& point, int point_label, int latest_id,
                                                     std::span<const F2FMatch> matches,
                                                     std::span<const PosedKeyframe> window,
                                                     const Pose& extrinsic, const AssociationConfig& config);

/// World-frame position of an observation.
Vec3 observation_to_world(const PlaneObservation& obs, std::span<const PosedKeyframe> window, const Pose& extrinsic);

struct AssociationStats {
  int source_points = 0;
  int f2f_attempts = 0;
  int f2f_matches = 0;
  int rejected = 0;
  int accepted = 0;
};

/// Source points of the latest keyframe used for association, thinned to
/// one map point per source voxel and capped.
std::vector<std::uint32_t> select_source_points(const Keyframe& latest, const AssociationConfig& config);

/// Runs the full association for the latest keyframe against every other
/// window keyframe. Output order follows source-point order.
std::vector<SamePlaneAssociation> associate_keyframe(const PosedKeyframe& latest,
                                                     std::span<const PosedKeyframe> window,
                                                     const Pose& extrinsic, const AssociationConfig& config,
                                                     AssociationStats* stats = nullptr);

}  // namespace planelio
