#include "planelio/commands.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "planelio/dataset.hpp"
#include "planelio/simulator.hpp"

namespace planelio {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json pose_json(const Pose& p) {
  const Quat q = p.q.normalized();
  return {{"p", vec_json(p.p)}, {"q", json::array({q.x(), q.y(), q.z(), q.w()})}};
}

std::ofstream open_csv(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIoFailure, "cannot write " + path.string());
  out.precision(9);
  return out;
}

std::string mode_name(const RunConfig& c) {
  if (c.association.covariance_mode == CovarianceMode::kAdaptive) return "adaptive";
  std::ostringstream s;
  s << "fixed(" << c.association.fixed_sigma_eps << ")";
  return s.str();
}

}  // namespace

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInitializationFailure:
      return 2;
    case ErrorKind::kSolverDiverged:
      return 3;
    default:
      return 1;
  }
}

void cmd_simulate(const SimulateOptions& o) {
  sim::SensorNoiseSpec noise = o.noise_free ? sim::SensorNoiseSpec::noise_free() : sim::SensorNoiseSpec{};
  if (o.lidar_sigma) {
    if (*o.lidar_sigma < 0.0) throw Error(ErrorKind::kNonPositiveInput, "lidar sigma must be non-negative");
    noise.lidar_range_sigma = *o.lidar_sigma;
  }
  const sim::TrajectorySpec traj = sim::make_trajectory(o.trajectory, o.duration);
  const WorldConfig world;
  const Dataset ds = sim::simulate(o.world, traj, noise, world, o.seed);
  write_dataset(ds, o.output);

  std::ofstream cfg(o.output / "sensor.cfg");
  if (!cfg) throw Error(ErrorKind::kIoFailure, "cannot write sensor.cfg");
  cfg.precision(17);
  const Quat q = noise.extrinsic.q.normalized();
  cfg << "# sensor setup of the simulated dataset\n";
  cfg << "extrinsic_p = " << noise.extrinsic.p.x() << ' ' << noise.extrinsic.p.y() << ' ' << noise.extrinsic.p.z()
      << '\n';
  cfg << "extrinsic_q = " << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << q.w() << '\n';
  cfg << "t_d = " << noise.t_d << '\n';
  // Zero densities would make the preintegration covariance singular; the
  // estimator keeps its defaults for noise-free data.
  if (noise.gyro_noise_density > 0.0) cfg << "gyro_noise_density = " << noise.gyro_noise_density << '\n';
  if (noise.accel_noise_density > 0.0) cfg << "accel_noise_density = " << noise.accel_noise_density << '\n';
  if (noise.gyro_bias_walk > 0.0) cfg << "gyro_bias_walk = " << noise.gyro_bias_walk << '\n';
  if (noise.accel_bias_walk > 0.0) cfg << "accel_bias_walk = " << noise.accel_bias_walk << '\n';
  if (noise.lidar_range_sigma == 0.0) {
    // Exact geometry: association gates at the numeric precision of the
    // pipeline, so points near plane intersections are never mixed.
    cfg << "sigma_eps_f2f = 3e-5\n";
    cfg << "thickness_cap = 1e-10\n";
    cfg << "variance_floor = 1e-20\n";
  }
  if (!cfg) throw Error(ErrorKind::kIoFailure, "cannot write sensor.cfg");
}

RunConfig resolve_run_config(const fs::path& dataset, const std::optional<fs::path>& config) {
  RunConfig c;
  if (fs::exists(dataset / "sensor.cfg")) load_config_file(c, dataset / "sensor.cfg");
  if (config) load_config_file(c, *config);
  validate(c);
  return c;
}

std::string run_report_json(const RunResult& r, const RunConfig& c, const TrajectoryRecord& truth) {
  json j;
  j["config"] = {
      {"window_size", c.estimator.window_size},
      {"covariance_mode", mode_name(c)},
      {"jacobian_mode", c.estimator.jacobian_mode == JacobianMode::kFull ? "full" : "frozen_plane"},
      {"selection_index", c.association.selection_index},
      {"estimate_extrinsic", c.estimator.estimate_extrinsic},
      {"t_d", c.t_d},
  };

  json kfs = json::array();
  long total_new = 0, total_removed = 0, total_iterations = 0;
  double t_map = 0.0, t_assoc = 0.0, t_opt = 0.0, t_marg = 0.0;
  for (const KeyframeRecord& k : r.keyframes) {
    kfs.push_back({{"id", k.id},
                   {"t", k.t},
                   {"window_nodes", k.window_nodes},
                   {"new_ba_factors", k.new_ba_factors},
                   {"ba_factors", k.ba_factors},
                   {"preint_factors", k.preint_factors},
                   {"removed", k.removed},
                   {"iterations_step1", k.iterations_step1},
                   {"iterations_step2", k.iterations_step2},
                   {"final_cost", k.final_cost},
                   {"map_ms", k.map_ms},
                   {"association_ms", k.association_ms},
                   {"optimization_ms", k.optimization_ms},
                   {"marginalization_ms", k.marginalization_ms},
                   {"position_std", vec_json(k.position_std)},
                   {"yaw_std_deg", k.yaw_std * kRadToDeg},
                   {"extrinsic_free", k.extrinsic_free},
                   {"extrinsic_position_std", k.extrinsic_position_std},
                   {"extrinsic_rotation_std_deg", k.extrinsic_rotation_std * kRadToDeg}});
    total_new += k.new_ba_factors;
    total_removed += k.removed;
    total_iterations += k.iterations_step1 + k.iterations_step2;
    t_map += k.map_ms;
    t_assoc += k.association_ms;
    t_opt += k.optimization_ms;
    t_marg += k.marginalization_ms;
  }
  j["keyframes"] = kfs;

  const double lidar_rate =
      r.data_duration > 0.0 ? static_cast<double>(r.frames_processed - 1) / r.data_duration : 0.0;
  const double seconds = r.total_ms / 1000.0;
  j["summary"] = {
      {"keyframes", r.keyframes.size()},
      {"frames_processed", r.frames_processed},
      {"ba_factors_created", total_new},
      {"ba_factors_removed", total_removed},
      {"solver_iterations", total_iterations},
      {"timing_ms", {{"map", t_map}, {"association", t_assoc}, {"optimization", t_opt}, {"marginalization", t_marg},
                     {"total", r.total_ms}}},
      {"equivalent_fps", seconds > 0.0 ? r.data_duration / seconds * lidar_rate : 0.0},
      {"final_extrinsic", pose_json(r.final_extrinsic)},
  };

  // Dead-reckoning audit: growth of the latest node's marginal uncertainty.
  json unc = json::object();
  if (r.keyframes.size() >= 2) {
    const KeyframeRecord* first = nullptr;
    for (const KeyframeRecord& k : r.keyframes) {
      if (k.yaw_std > 0.0) {
        first = &k;
        break;
      }
    }
    const KeyframeRecord& last = r.keyframes.back();
    if (first) {
      const double yaw_growth = last.yaw_std / first->yaw_std;
      Vec3 pos_growth = Vec3::Zero();
      for (int i = 0; i < 3; ++i) {
        pos_growth(i) = first->position_std(i) > 0.0 ? last.position_std(i) / first->position_std(i) : 0.0;
      }
      const double spread = last.position_std.maxCoeff() / std::max(last.position_std.minCoeff(), 1e-12);
      unc = {{"yaw_std_first_deg", first->yaw_std * kRadToDeg},
             {"yaw_std_last_deg", last.yaw_std * kRadToDeg},
             {"yaw_std_growth", yaw_growth},
             {"position_std_first", vec_json(first->position_std)},
             {"position_std_last", vec_json(last.position_std)},
             {"position_std_growth", vec_json(pos_growth)},
             {"position_std_axis_ratio", spread},
             {"high_uncertainty_growth", yaw_growth > 2.0 || pos_growth.maxCoeff() > 2.0 || spread > 3.0}};
    }
  }
  j["uncertainty"] = unc;

  json errors = json::array();
  if (!truth.empty() && !r.trajectory.empty()) {
    try {
      for (const AxisError& e : error_series(r.trajectory, truth)) {
        errors.push_back({{"t", e.t}, {"position", vec_json(e.position)}, {"attitude_deg", vec_json(e.attitude * kRadToDeg)}});
      }
    } catch (const Error&) {
      errors = json::array();
    }
  }
  j["errors"] = errors;
  return j.dump(2);
}

RunResult cmd_run(const RunOptions& o) {
  const RunConfig config = resolve_run_config(o.dataset, o.config);
  const Dataset ds = read_dataset(o.dataset);
  if (ds.imu.empty() || ds.frames.empty()) throw Error(ErrorKind::kDatasetError, "dataset has no IMU or LiDAR data");
  RunResult r = run_pipeline(ds, config);
  write_tum(o.output, r.trajectory);
  fs::path report = o.report ? *o.report : o.output.parent_path() / (o.output.stem().string() + ".report.json");
  std::ofstream out(report);
  if (!out) throw Error(ErrorKind::kIoFailure, "cannot write " + report.string());
  out << run_report_json(r, config, ds.truth) << '\n';
  return r;
}

EvalResult cmd_evaluate(const fs::path& estimate, const fs::path& truth, EvalMode mode) {
  return evaluate_trajectory(read_tum(estimate), read_tum(truth), mode);
}

void cmd_report(const fs::path& report, const fs::path& out_dir) {
  std::ifstream in(report);
  if (!in) throw Error(ErrorKind::kIoFailure, "cannot read " + report.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kIoFailure, std::string("malformed report: ") + e.what());
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::kIoFailure, "cannot create " + out_dir.string());

  const json empty = json::array();
  const json& kfs = j.contains("keyframes") ? j["keyframes"] : empty;
  const json& errs = j.contains("errors") ? j["errors"] : empty;

  std::ofstream e = open_csv(out_dir / "errors.csv");
  e << "t,ex,ey,ez,eroll_deg,epitch_deg,eyaw_deg\n";
  for (const json& r : errs) {
    e << r["t"].get<double>();
    for (int i = 0; i < 3; ++i) e << ',' << r["position"][i].get<double>();
    for (int i = 0; i < 3; ++i) e << ',' << r["attitude_deg"][i].get<double>();
    e << '\n';
  }

  std::ofstream f = open_csv(out_dir / "factors.csv");
  f << "keyframe,t,new_ba_factors,ba_factors,preint_factors,removed,iterations\n";
  std::ofstream t = open_csv(out_dir / "timing.csv");
  t << "keyframe,t,map_ms,association_ms,optimization_ms,marginalization_ms\n";
  for (const json& k : kfs) {
    f << k["id"].get<int>() << ',' << k["t"].get<double>() << ',' << k["new_ba_factors"].get<int>() << ','
      << k["ba_factors"].get<int>() << ',' << k["preint_factors"].get<int>() << ',' << k["removed"].get<int>() << ','
      << k["iterations_step1"].get<int>() + k["iterations_step2"].get<int>() << '\n';
    t << k["id"].get<int>() << ',' << k["t"].get<double>() << ',' << k["map_ms"].get<double>() << ','
      << k["association_ms"].get<double>() << ',' << k["optimization_ms"].get<double>() << ','
      << k["marginalization_ms"].get<double>() << '\n';
  }
  if (!e || !f || !t) throw Error(ErrorKind::kIoFailure, "failed writing report CSVs");
}

}  // namespace planelio
