#include "planelio/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "planelio/error.hpp"

namespace planelio {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void invalid(const std::string& key, const std::string& value) {
  throw Error(ErrorKind::kInvalidConfig, "invalid value '" + value + "' for '" + key + "'");
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (trim(value.substr(used)).empty() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  invalid(key, value);
}

int to_int(const std::string& key, const std::string& value) {
  const double v = to_double(key, value);
  if (v != std::floor(v)) invalid(key, value);
  return static_cast<int>(v);
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  invalid(key, value);
}

std::vector<double> to_vector(const std::string& key, const std::string& value, std::size_t n) {
  std::istringstream in(value);
  std::vector<double> out;
  std::string tok;
  while (in >> tok) out.push_back(to_double(key, tok));
  if (out.size() != n) invalid(key, value);
  return out;
}

}  // namespace

void apply_config_entry(RunConfig& c, const std::string& key, const std::string& value) {
  auto& e = c.estimator;
  auto& a = c.association;
  if (key == "window_size") {
    e.window_size = to_int(key, value);
  } else if (key == "huber_k") {
    e.huber_k = to_double(key, value);
  } else if (key == "chi1d_threshold") {
    e.chi1d_threshold = to_double(key, value);
  } else if (key == "max_iterations") {
    e.max_iterations = to_int(key, value);
  } else if (key == "step1_iterations") {
    e.step1_iterations = to_int(key, value);
  } else if (key == "jacobian_mode") {
    if (value == "frozen_plane") {
      e.jacobian_mode = JacobianMode::kFrozenPlane;
    } else if (value == "full") {
      e.jacobian_mode = JacobianMode::kFull;
    } else {
      invalid(key, value);
    }
  } else if (key == "estimate_extrinsic") {
    e.estimate_extrinsic = to_bool(key, value);
  } else if (key == "covariance_mode") {
    if (value == "adaptive") {
      a.covariance_mode = CovarianceMode::kAdaptive;
    } else if (value == "fixed") {
      a.covariance_mode = CovarianceMode::kFixed;
    } else if (value.starts_with("fixed(") && value.ends_with(")")) {
      a.covariance_mode = CovarianceMode::kFixed;
      a.fixed_sigma_eps = to_double(key, value.substr(6, value.size() - 7));
    } else {
      invalid(key, value);
    }
  } else if (key == "fixed_sigma_eps") {
    a.fixed_sigma_eps = to_double(key, value);
  } else if (key == "selection_index") {
    a.selection_index = to_int(key, value);
  } else if (key == "max_neighbor_radius") {
    a.max_neighbor_radius = to_double(key, value);
  } else if (key == "sigma_eps_f2f") {
    a.sigma_eps_f2f = to_double(key, value);
  } else if (key == "thickness_cap") {
    a.thickness_cap = to_double(key, value);
  } else if (key == "variance_floor") {
    a.variance_floor = to_double(key, value);
  } else if (key == "source_voxel_size") {
    a.source_voxel_size = to_double(key, value);
  } else if (key == "max_source_points") {
    a.max_source_points = to_int(key, value);
  } else if (key == "voxel_size") {
    c.voxel.voxel_size = to_double(key, value);
  } else if (key == "keyframe_translation") {
    c.keyframe.translation = to_double(key, value);
  } else if (key == "keyframe_rotation_deg") {
    c.keyframe.rotation_deg = to_double(key, value);
  } else if (key == "keyframe_elapsed") {
    c.keyframe.elapsed = to_double(key, value);
  } else if (key == "init_duration") {
    c.init_duration = to_double(key, value);
  } else if (key == "max_gyro_std") {
    c.init.max_gyro_std = to_double(key, value);
  } else if (key == "t_d") {
    c.t_d = to_double(key, value);
  } else if (key == "extrinsic_p") {
    const auto v = to_vector(key, value, 3);
    c.extrinsic.p = Vec3(v[0], v[1], v[2]);
  } else if (key == "extrinsic_q") {
    const auto v = to_vector(key, value, 4);
    const Quat q(v[3], v[0], v[1], v[2]);
    if (q.norm() < 1e-9) invalid(key, value);
    c.extrinsic.q = q.normalized();
  } else if (key == "gravity") {
    const auto v = to_vector(key, value, 3);
    c.world.gravity = Vec3(v[0], v[1], v[2]);
  } else if (key == "gyro_noise_density") {
    c.world.gyro_noise_density = to_double(key, value);
  } else if (key == "accel_noise_density") {
    c.world.accel_noise_density = to_double(key, value);
  } else if (key == "gyro_bias_walk") {
    c.world.gyro_bias_walk = to_double(key, value);
  } else if (key == "accel_bias_walk") {
    c.world.accel_bias_walk = to_double(key, value);
  } else if (key == "prior_sigma_v") {
    c.prior.v = to_double(key, value);
  } else if (key == "prior_sigma_bg") {
    c.prior.bg = to_double(key, value);
  } else if (key == "prior_sigma_ba") {
    c.prior.ba = to_double(key, value);
  } else if (key == "prior_sigma_extrinsic_p") {
    c.prior.extrinsic_p = to_double(key, value);
  } else if (key == "prior_sigma_extrinsic_rot_deg") {
    c.prior.extrinsic_rot = to_double(key, value) * std::numbers::pi / 180.0;
  } else if (key == "extrinsic_min_rotation_deg") {
    c.extrinsic_min_rotation_deg = to_double(key, value);
  } else if (key == "extrinsic_release_std") {
    c.extrinsic_release_std = to_double(key, value);
  } else if (key == "rebuild_rotation_deg") {
    c.rebuild_rotation_deg = to_double(key, value);
  } else if (key == "rebuild_translation") {
    c.rebuild_translation = to_double(key, value);
  } else {
    throw Error(ErrorKind::kInvalidConfig, "unknown configuration key '" + key + "'");
  }
}

void load_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIoFailure, "cannot read " + path.string());
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::kInvalidConfig, path.filename().string() + ":" + std::to_string(n) + ": expected key = value");
    }
    apply_config_entry(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void validate(const RunConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorKind::kInvalidConfig, what);
  };
  require(c.estimator.window_size >= 2, "window_size must be at least 2");
  require(c.estimator.huber_k > 0.0, "huber_k must be positive");
  require(c.estimator.chi1d_threshold > 0.0, "chi1d_threshold must be positive");
  require(c.estimator.max_iterations >= 1 && c.estimator.step1_iterations >= 1, "iteration limits must be positive");
  require(c.association.selection_index >= 0 && c.association.selection_index < kNeighborCount,
          "selection_index must be in [0, 4]");
  require(c.association.min_members >= 5, "min_members must be at least 5");
  require(c.association.fixed_sigma_eps > 0.0, "fixed_sigma_eps must be positive");
  require(c.association.max_neighbor_radius > 0.0 && c.association.sigma_eps_f2f > 0.0 &&
              c.association.thickness_cap > 0.0,
          "association thresholds must be positive");
  require(c.voxel.voxel_size > 0.0, "voxel_size must be positive");
  require(c.extrinsic_min_rotation_deg >= 0.0, "extrinsic_min_rotation_deg must be non-negative");
  require(c.extrinsic_release_std > 0.0, "extrinsic_release_std must be positive");
  require(c.init_duration > 0.0, "init_duration must be positive");
  require(c.prior.v > 0.0 && c.prior.bg > 0.0 && c.prior.ba > 0.0, "prior sigmas must be positive");
  require(c.prior.extrinsic_p >= 0.0 && c.prior.extrinsic_rot >= 0.0, "extrinsic prior sigmas must be non-negative");
}

// ---------------------------------------------------------------------------

Pipeline::Pipeline(RunConfig config, std::vector<ImuSample> imu) : config_(std::move(config)), imu_(std::move(imu)) {
  validate(config_);
}

void Pipeline::initialize() {
  if (imu_.size() < 2) throw Error(ErrorKind::kInitializationFailure, "not enough IMU data to initialize");
  const double t_end = imu_.front().t + config_.init_duration + 1e-6;
  auto end = std::find_if(imu_.begin(), imu_.end(), [&](const ImuSample& s) { return s.t > t_end; });
  try {
    anchor_ = static_initialize(std::span<const ImuSample>(imu_.begin(), end), config_.world, config_.init);
  } catch (const Error& e) {
    throw Error(ErrorKind::kInitializationFailure, std::string("static initialization failed: ") + e.what());
  }
  ins_ = {anchor_};
  window_ = WindowState{};
  window_.extrinsic = config_.extrinsic;
  window_.t_d = config_.t_d;
  initialized_ = true;
}

ImuState Pipeline::propagate_to(const ImuState& from, double t) const {
  if (t <= from.t) return from;
  const std::vector<ImuSample> seg = samples_between(imu_, from.t, t);
  ImuState s = from;
  for (std::size_t i = 1; i < seg.size(); ++i) s = mechanize(s, seg[i - 1], seg[i], config_.world);
  return s;
}

void Pipeline::extend_ins(double t_end) {
  if (ins_.back().t >= t_end) return;
  const std::vector<ImuSample> seg = samples_between(imu_, ins_.back().t, t_end);
  for (std::size_t i = 1; i < seg.size(); ++i) ins_.push_back(mechanize(ins_.back(), seg[i - 1], seg[i], config_.world));
}

std::shared_ptr<const Keyframe> Pipeline::build_keyframe(const KeyframeSource& source, double t) const {
  std::vector<PosedFrame> posed;
  posed.reserve(source.raw.size());
  for (const LidarFrame& raw : source.raw) {
    posed.push_back({interpolate_pose(source.ins, raw.t), deskew(raw, source.ins, source.extrinsic_at_build)});
  }
  Keyframe kf = accumulate_map(posed.back().body_pose, posed, source.extrinsic_at_build, config_.voxel);
  kf.t = t;
  kf.raw_points.reserve(posed.back().frame.points.size());
  for (const LidarPoint& p : posed.back().frame.points) kf.raw_points.push_back(p.xyz);
  return std::make_shared<const Keyframe>(std::move(kf));
}

bool Pipeline::process_frame(const LidarFrame& input) {
  if (!initialized_) throw Error(ErrorKind::kInitializationFailure, "pipeline used before initialization");
  LidarFrame frame = input;
  frame.t += config_.t_d;
  if (frame.points.empty() || frame.t < anchor_.t) return false;
  double max_offset = 0.0;
  for (const LidarPoint& p : frame.points) max_offset = std::max(max_offset, p.t_offset);
  if (frame.t + max_offset > imu_.back().t) return false;

  extend_ins(frame.t + max_offset);
  const Pose body = interpolate_pose(ins_, frame.t);
  pending_.push_back(std::move(frame));
  ++result_.frames_processed;
  const double t = pending_.back().t;

  if (!window_.nodes.empty()) {
    const Pose last = window_.nodes.back().state.pose();
    if (!is_new_keyframe(last, body, t - last_keyframe_t_, config_.keyframe)) return true;
  }

  KeyframeSource source{pending_, ins_, window_.extrinsic};
  std::shared_ptr<const Keyframe> kf;
  try {
    kf = build_keyframe(source, t);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kEmptyMap) return true;
    throw;
  }
  pending_.clear();
  process_keyframe(propagate_to(anchor_, t), std::move(kf), std::move(source));
  return true;
}

void Pipeline::process_keyframe(const ImuState& node_state, std::shared_ptr<const Keyframe> keyframe,
                                KeyframeSource source) {
  const auto start = Clock::now();
  const int id = next_id_++;
  KeyframeRecord rec;
  rec.id = id;
  rec.t = node_state.t;
  keyframes_[id] = keyframe;
  sources_[id] = std::move(source);

  if (window_.nodes.empty()) {
    window_.nodes.push_back({id, node_state});
    window_.prior = make_initial_prior(window_.nodes.front(), window_.extrinsic, config_.prior);
    window_.anchored = false;
  } else {
    const WindowNode& prev = window_.nodes.back();
    PreintFactor pf;
    pf.from_id = prev.id;
    pf.to_id = id;
    pf.samples = samples_between(imu_, prev.state.t, node_state.t);
    pf.delta = preintegrate(pf.samples, prev.state.bg, prev.state.ba, config_.world);
    preint_.push_back(std::move(pf));
    window_.nodes.push_back({id, node_state});

    // Association against every other keyframe in the window.
    auto t0 = Clock::now();
    std::vector<PosedKeyframe> posed;
    posed.reserve(window_.nodes.size());
    for (const WindowNode& n : window_.nodes) posed.push_back({n.id, n.state.pose(), keyframes_.at(n.id).get()});
    std::vector<SamePlaneAssociation> assocs =
        associate_keyframe(posed.back(), posed, window_.extrinsic, config_.association, &rec.association);
    std::vector<BAFactor> fresh;
    fresh.reserve(assocs.size());
    for (SamePlaneAssociation& a : assocs) {
      const auto& obs = a.observations();
      const bool labeled = std::all_of(obs.begin(), obs.end(), [](const PlaneObservation& o) { return o.label >= 0; });
      const bool any_label = std::any_of(obs.begin(), obs.end(), [](const PlaneObservation& o) { return o.label != -1; });
      if (any_label) {
        ++rec.labeled_associations;
        const bool pure = labeled && std::all_of(obs.begin(), obs.end(), [&](const PlaneObservation& o) {
                            return o.label == obs.front().label;
                          });
        if (pure) ++rec.pure_associations;
      }
      fresh.push_back({std::move(a), 0});
    }
    if (on_new_factors) on_new_factors(fresh, window_);
    rec.new_ba_factors = static_cast<int>(fresh.size());
    for (BAFactor& f : fresh) {
      if (f.tag != 0) ++rec.new_tagged;
      ba_.push_back(std::move(f));
    }
    rec.association_ms = ms_since(t0);

    t0 = Clock::now();
    std::vector<int> tags;
    tags.reserve(ba_.size());
    for (const BAFactor& f : ba_) tags.push_back(f.tag);
    EstimatorConfig est = config_.estimator;
    {
      const Eigen::Matrix<double, 6, 6> c = extrinsic_covariance(window_, ba_, preint_, config_.world, est);
      rec.extrinsic_position_std = std::sqrt(std::max(0.0, Eigen::SelfAdjointEigenSolver<Mat3>(c.topLeftCorner<3, 3>()).eigenvalues()(2)));
      rec.extrinsic_rotation_std = std::sqrt(std::max(0.0, Eigen::SelfAdjointEigenSolver<Mat3>(c.bottomRightCorner<3, 3>()).eigenvalues()(2)));
    }
    if (!extrinsic_excited_) {
      // Lever-arm directions seen so far: a yaw-only window leaves one axis blind.
      Mat3 info = Mat3::Zero();
      const Mat3 r0t = window_.nodes.front().state.q.toRotationMatrix().transpose();
      for (const WindowNode& n : window_.nodes) {
        const Mat3 d = Mat3::Identity() - r0t * n.state.q.toRotationMatrix();
        info += d.transpose() * d;
      }
      const double lmin = Eigen::SelfAdjointEigenSolver<Mat3>(info).eigenvalues()(0);
      const double th = config_.extrinsic_min_rotation_deg * std::numbers::pi / 180.0;
      extrinsic_excited_ = lmin >= 2.0 * (1.0 - std::cos(th)) && rec.extrinsic_position_std > 0.0 &&
                           rec.extrinsic_position_std <= config_.extrinsic_release_std;
    }
    est.estimate_extrinsic = est.estimate_extrinsic && extrinsic_excited_;
    rec.extrinsic_free = est.estimate_extrinsic;
    const TwoStepReport two = two_step_optimize(window_, ba_, preint_, config_.world, est);
    rec.removed = static_cast<int>(two.removed.size());
    for (std::size_t i : two.removed) rec.removed_tagged += tags[i] != 0 ? 1 : 0;
    rec.iterations_step1 = two.step1.iterations;
    rec.iterations_step2 = two.step2.iterations;
    rec.final_cost = two.step2.final_cost;
    rec.optimization_ms = ms_since(t0);

    if (static_cast<int>(window_.nodes.size()) >= config_.estimator.window_size + 1) {
      t0 = Clock::now();
      const WindowNode& oldest = window_.nodes.front();
      result_.trajectory.push_back({oldest.state.t, oldest.state.pose()});
      const int gone = oldest.id;
      marginalize_oldest(window_, ba_, preint_, config_.world, est);
      keyframes_.erase(gone);
      sources_.erase(gone);
      rec.marginalization_ms = ms_since(t0);
    }
    repropagate_preintegration(window_, preint_, config_.world, config_.estimator);
  }

  const int slot = static_cast<int>(window_.nodes.size()) - 1;
  if (slot >= 1) {
    const Eigen::Matrix<double, 6, 6> cov =
        pose_covariance(window_, ba_, preint_, config_.world, config_.estimator, slot);
    rec.position_std = cov.topLeftCorner<3, 3>().diagonal().cwiseMax(0.0).cwiseSqrt();
    const Mat3 r = window_.nodes.back().state.q.toRotationMatrix();
    const Mat3 cov_w = r * cov.bottomRightCorner<3, 3>() * r.transpose();
    rec.yaw_std = std::sqrt(std::max(cov_w(2, 2), 0.0));
  }
  rec.window_nodes = static_cast<int>(window_.nodes.size());
  rec.ba_factors = static_cast<int>(ba_.size());
  rec.preint_factors = static_cast<int>(preint_.size());

  anchor_ = window_.nodes.back().state;
  ins_ = {anchor_};
  last_keyframe_t_ = node_state.t;
  const auto t_map = Clock::now();
  rebuild_maps_if_needed();
  rec.map_ms = ms_since(t_map);
  result_.total_ms += ms_since(start);
  result_.keyframes.push_back(rec);
}

void Pipeline::rebuild_maps_if_needed() {
  if (config_.rebuild_rotation_deg <= 0.0 && config_.rebuild_translation <= 0.0) return;
  const double rot_limit = config_.rebuild_rotation_deg * std::numbers::pi / 180.0;
  for (auto& [id, src] : sources_) {
    const double dr = rot::angle(src.extrinsic_at_build.q.conjugate() * window_.extrinsic.q);
    const double dt = (src.extrinsic_at_build.p - window_.extrinsic.p).norm();
    const bool rotated = config_.rebuild_rotation_deg > 0.0 && dr > rot_limit;
    const bool moved = config_.rebuild_translation > 0.0 && dt > config_.rebuild_translation;
    if (!rotated && !moved) continue;
    src.extrinsic_at_build = window_.extrinsic;
    keyframes_[id] = build_keyframe(src, keyframes_[id]->t);
  }
}

RunResult Pipeline::finish() {
  RunResult out = result_;
  for (const WindowNode& n : window_.nodes) out.trajectory.push_back({n.state.t, n.state.pose()});
  out.final_extrinsic = window_.extrinsic;
  return out;
}

RunResult run_pipeline(const Dataset& dataset, const RunConfig& config, const std::function<void(Pipeline&)>& setup) {
  Pipeline pipeline(config, dataset.imu);
  if (setup) setup(pipeline);
  const auto start = Clock::now();
  pipeline.initialize();
  double first = -1.0, last = -1.0;
  for (const LidarFrame& f : dataset.frames) {
    if (pipeline.process_frame(f)) {
      if (first < 0.0) first = f.t;
      last = f.t;
    }
  }
  RunResult r = pipeline.finish();
  r.total_ms = ms_since(start);
  r.data_duration = first >= 0.0 ? last - first : 0.0;
  return r;
}

}  // namespace planelio
