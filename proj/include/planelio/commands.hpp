#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "planelio/error.hpp"
#include "planelio/evaluation.hpp"
#include "planelio/pipeline.hpp"

namespace planelio {

struct SimulateOptions {
  std::string world = "box";
  std::string trajectory = "circle";
  double duration = 60.0;
  std::uint64_t seed = 7;
  bool noise_free = false;
  std::optional<double> lidar_sigma;
  std::filesystem::path output;
};

/// Writes a simulated dataset plus sensor.cfg (extrinsic, t_d and IMU noise
/// settings in config syntax). Throws Error(kUnknownPreset), Error(kIoFailure).
void cmd_simulate(const SimulateOptions& options);

struct RunOptions {
  std::filesystem::path dataset;
  std::optional<std::filesystem::path> config;
  std::filesystem::path output = "estimate.tum";
  std::optional<std::filesystem::path> report;  ///< defaults to <output stem>.report.json
};

/// Loads dataset/sensor.cfg when present, then the --config file. Writes the
/// TUM estimate and the JSON run report.
RunResult cmd_run(const RunOptions& options);

/// Configuration resolved the way cmd_run does it.
RunConfig resolve_run_config(const std::filesystem::path& dataset, const std::optional<std::filesystem::path>& config);

/// JSON run report text. `truth` adds per-keyframe error series when non-empty.
std::string run_report_json(const RunResult& result, const RunConfig& config, const TrajectoryRecord& truth);

EvalResult cmd_evaluate(const std::filesystem::path& estimate, const std::filesystem::path& truth, EvalMode mode);

/// Writes errors.csv, factors.csv and timing.csv from a run report.
void cmd_report(const std::filesystem::path& report, const std::filesystem::path& out_dir);

/// 1 dataset and other errors, 2 initialization failure, 3 solver divergence.
int exit_code(ErrorKind kind);

}  // namespace planelio
