#include "planelio/association.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "planelio/error.hpp"

namespace planelio {
namespace {

const PosedKeyframe& find_keyframe(std::span<const PosedKeyframe> window, int id) {
  for (const PosedKeyframe& k : window) {
    if (k.id == id) return k;
  }
  throw std::out_of_range("keyframe " + std::to_string(id) + " not in window");
}

int map_label(const Keyframe& kf, std::uint32_t index) {
  return index < kf.map_labels.size() ? kf.map_labels[index] : -1;
}

}  // namespace

std::optional<F2FMatch> f2f_associate(const Vec3& point, const Pose& latest_body_pose, const Keyframe& target,
                                      int target_id, const Pose& target_body_pose, const Pose& extrinsic,
                                      const AssociationConfig& config, MatchFailure* why) {
  auto fail = [&](MatchFailure reason) -> std::optional<F2FMatch> {
    if (why) *why = reason;
    return std::nullopt;
  };
  if (target.local_map().size() < static_cast<std::size_t>(kNeighborCount)) {
    throw Error(ErrorKind::kMapTooSmall, "target map has fewer than five points");
  }
  const Pose to_target = (target_body_pose * extrinsic).inverse() * (latest_body_pose * extrinsic);
  const Vec3 projected = to_target * point;

  const std::vector<Neighbor> nn = knn(target, projected, kNeighborCount);
  const double radius = config.max_neighbor_radius;
  if (nn.back().sq_dist > radius * radius) return fail(MatchFailure::kRadius);

  F2FMatch m;
  m.source_point = point;
  m.target_keyframe = target_id;
  for (int i = 0; i < kNeighborCount; ++i) {
    m.neighbor_indices[i] = nn[i].index;
    m.neighbors[i] = target.local_map()[nn[i].index];
  }
  try {
    m.fitted_plane = fit_plane(m.neighbors);
  } catch (const Error&) {
    return fail(MatchFailure::kDegenerate);
  }
  if (std::abs(point_to_plane(m.fitted_plane, projected)) > 3.0 * config.sigma_eps_f2f) {
    return fail(MatchFailure::kDistance);
  }
  m.thickness = m.fitted_plane.thickness;
  if (m.thickness > config.thickness_cap) return fail(MatchFailure::kThickness);
  if (why) *why = MatchFailure::kNone;
  return m;
}

SamePlaneAssociation::SamePlaneAssociation(std::vector<PlaneObservation> observations, int latest_id,
                                           double variance)
    : observations_(std::move(observations)), latest_id_(latest_id), variance_(variance) {
  if (observations_.size() < 5) throw std::invalid_argument("same-plane association needs five members");
  std::unordered_set<int> ids;
  int latest = 0;
  for (const PlaneObservation& o : observations_) {
    if (!ids.insert(o.keyframe_id).second) throw std::invalid_argument("duplicate keyframe in association");
    if (o.keyframe_id == latest_id) ++latest;
  }
  if (latest != 1) throw std::invalid_argument("association must hold exactly one latest-keyframe point");
  if (!(variance_ > 0.0)) throw std::invalid_argument("association variance must be positive");
}

void SamePlaneAssociation::set_variance(double variance) {
  if (!(variance > 0.0)) throw std::invalid_argument("association variance must be positive");
  variance_ = variance;
}

void SamePlaneAssociation::displace(std::size_t index, const Vec3& point) { observations_.at(index).point = point; }

double adaptive_covariance(std::span<const double> thicknesses, double variance_floor) {
  if (thicknesses.empty()) return variance_floor;
  double sum = 0.0;
  for (double g : thicknesses) sum += g * g;
  return std::max(sum / static_cast<double>(thicknesses.size()), variance_floor);
}

Vec3 observation_to_world(const PlaneObservation& obs, std::span<const PosedKeyframe> window,
                          const Pose& extrinsic) {
  const PosedKeyframe& k = find_keyframe(window, obs.keyframe_id);
  return k.body_pose * (extrinsic * obs.point);
}

std::vector<PlaneObservation> cull_outliers(std::span<const PlaneObservation> observations,
                                            std::span<const PosedKeyframe> window, const Pose& extrinsic,
                                            double sigma_w) {
  std::vector<Vec3> world;
  world.reserve(observations.size());
  for (const PlaneObservation& o : observations) world.push_back(observation_to_world(o, window, extrinsic));
  const Plane plane = fit_plane(world);
  std::vector<PlaneObservation> kept;
  kept.reserve(observations.size());
  for (std::size_t i = 0; i < observations.size(); ++i) {
    if (std::abs(point_to_plane(plane, world[i])) <= 3.0 * sigma_w) kept.push_back(observations[i]);
  }
  return kept;
}

std::optional<SamePlaneAssociation> build_same_plane(const Vec3& point, int point_label, int latest_id,
                                                     std::span<const F2FMatch> matches,
                                                     std::span<const PosedKeyframe> window,
                                                     const Pose& extrinsic, const AssociationConfig& config) {
  if (static_cast<int>(matches.size()) + 1 < config.min_members) return std::nullopt;
  const int sel = std::clamp(config.selection_index, 0, kNeighborCount - 1);

  std::vector<PlaneObservation> obs;
  obs.reserve(matches.size() + 1);
  for (const F2FMatch& m : matches) {
    const Keyframe* kf = find_keyframe(window, m.target_keyframe).keyframe;
    obs.push_back({m.target_keyframe, m.neighbors[sel], kf ? map_label(*kf, m.neighbor_indices[sel]) : -1});
  }
  obs.push_back({latest_id, point, point_label});

  auto variance_of = [&](std::span<const PlaneObservation> members) {
    if (config.covariance_mode == CovarianceMode::kFixed) return thickness_variance(config.fixed_sigma_eps);
    std::vector<double> gammas;
    for (const PlaneObservation& o : members) {
      if (o.keyframe_id == latest_id) continue;
      for (const F2FMatch& m : matches) {
        if (m.target_keyframe == o.keyframe_id) gammas.push_back(m.thickness);
      }
    }
    return adaptive_covariance(gammas, config.variance_floor);
  };

  std::vector<PlaneObservation> kept;
  try {
    kept = cull_outliers(obs, window, extrinsic, sigma_from_thickness_variance(variance_of(obs)));
  } catch (const Error&) {
    return std::nullopt;
  }
  if (static_cast<int>(kept.size()) < config.min_members) return std::nullopt;
  const bool has_latest = std::any_of(kept.begin(), kept.end(),
                                      [&](const PlaneObservation& o) { return o.keyframe_id == latest_id; });
  if (!has_latest) return std::nullopt;
  return SamePlaneAssociation(std::move(kept), latest_id, variance_of(kept));
}

std::vector<std::uint32_t> select_source_points(const Keyframe& latest, const AssociationConfig& config) {
  const std::vector<Vec3>& map = latest.local_map();
  std::vector<std::uint32_t> chosen;
  if (config.source_voxel_size > 0.0) {
    std::set<std::array<std::int64_t, 3>> seen;
    const double inv = 1.0 / config.source_voxel_size;
    for (std::uint32_t i = 0; i < map.size(); ++i) {
      const std::array<std::int64_t, 3> key{static_cast<std::int64_t>(std::floor(map[i].x() * inv)),
                                            static_cast<std::int64_t>(std::floor(map[i].y() * inv)),
                                            static_cast<std::int64_t>(std::floor(map[i].z() * inv))};
      if (seen.insert(key).second) chosen.push_back(i);
    }
  } else {
    chosen.resize(map.size());
    for (std::uint32_t i = 0; i < map.size(); ++i) chosen[i] = i;
  }
  const auto cap = static_cast<std::size_t>(config.max_source_points);
  if (cap > 0 && chosen.size() > cap) {
    std::vector<std::uint32_t> thinned;
    thinned.reserve(cap);
    for (std::size_t k = 0; k < cap; ++k) thinned.push_back(chosen[k * chosen.size() / cap]);
    chosen.swap(thinned);
  }
  return chosen;
}

std::vector<SamePlaneAssociation> associate_keyframe(const PosedKeyframe& latest,
                                                     std::span<const PosedKeyframe> window,
                                                     const Pose& extrinsic, const AssociationConfig& config,
                                                     AssociationStats* stats) {
  AssociationStats local;
  std::vector<SamePlaneAssociation> out;
  const std::vector<std::uint32_t> sources = select_source_points(*latest.keyframe, config);
  local.source_points = static_cast<int>(sources.size());

  std::vector<PosedKeyframe> lookup(window.begin(), window.end());
  if (std::none_of(lookup.begin(), lookup.end(), [&](const PosedKeyframe& k) { return k.id == latest.id; })) {
    lookup.push_back(latest);
  }

  std::vector<F2FMatch> matches;
  for (std::uint32_t idx : sources) {
    const Vec3& p = latest.keyframe->local_map()[idx];
    matches.clear();
    for (const PosedKeyframe& target : window) {
      if (target.id == latest.id || target.keyframe->local_map().size() < kNeighborCount) continue;
      ++local.f2f_attempts;
      auto m = f2f_associate(p, latest.body_pose, *target.keyframe, target.id, target.body_pose, extrinsic, config);
      if (m) matches.push_back(*m);
    }
    local.f2f_matches += static_cast<int>(matches.size());
    if (static_cast<int>(matches.size()) + 1 < config.min_members) continue;
    auto assoc = build_same_plane(p, map_label(*latest.keyframe, idx), latest.id, matches, lookup, extrinsic, config);
    if (assoc) {
      out.push_back(std::move(*assoc));
      ++local.accepted;
    } else {
      ++local.rejected;
    }
  }
  if (stats) *stats = local;
  return out;
}

}  // namespace planelio
