#include <iostream>

#include <CLI11.hpp>

#include "planelio/commands.hpp"

int main(int argc, char** argv) {
  using namespace planelio;
  CLI::App app{"Plane-point bundle adjustment LiDAR-inertial odometry"};
  app.require_subcommand(1);

  SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "write a simulated dataset");
  simulate->add_option("--world", sim.world, "box | corridor | corner | floor")->capture_default_str();
  simulate->add_option("--trajectory", sim.trajectory, "stationary | circle | figure_eight | straight | rich")
      ->capture_default_str();
  simulate->add_option("--duration", sim.duration, "seconds")->capture_default_str();
  simulate->add_option("--seed", sim.seed)->capture_default_str();
  simulate->add_flag("--noise-free", sim.noise_free, "zero IMU and LiDAR noise, zero biases");
  simulate->add_option("--lidar-sigma", sim.lidar_sigma, "range noise, m");
  simulate->add_option("--output", sim.output, "dataset directory")->required();

  RunOptions run;
  std::string run_config, run_report;
  auto* run_cmd = app.add_subcommand("run", "run the estimator on a dataset");
  run_cmd->add_option("--dataset", run.dataset, "dataset directory")->required();
  run_cmd->add_option("--config", run_config, "key = value settings");
  run_cmd->add_option("--output", run.output, "TUM trajectory")->capture_default_str();
  run_cmd->add_option("--report", run_report, "JSON run report");

  std::string est, truth, dataset, mode = "ate";
  auto* eval = app.add_subcommand("evaluate", "ATE, ARE or end-to-end error");
  eval->add_option("--estimate", est, "estimated TUM trajectory")->required();
  eval->add_option("--truth", truth, "ground-truth TUM trajectory");
  eval->add_option("--dataset", dataset, "use DIR/groundtruth.tum as truth");
  eval->add_option("--mode", mode)->check(CLI::IsMember({"ate", "are", "end_to_end"}))->capture_default_str();

  std::string report_in, report_out;
  auto* report = app.add_subcommand("report", "CSV series from a run report");
  report->add_option("--input", report_in, "JSON run report")->required();
  report->add_option("--output", report_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate) {
      cmd_simulate(sim);
    } else if (*run_cmd) {
      if (!run_config.empty()) run.config = run_config;
      if (!run_report.empty()) run.report = run_report;
      const RunResult r = cmd_run(run);
      std::cout << "keyframes " << r.keyframes.size() << ", poses " << r.trajectory.size() << '\n';
    } else if (*eval) {
      if (truth.empty()) {
        if (dataset.empty()) throw Error(ErrorKind::kInvalidConfig, "--truth or --dataset is required");
        truth = (std::filesystem::path(dataset) / "groundtruth.tum").string();
      }
      const EvalResult r = cmd_evaluate(est, truth, parse_eval_mode(mode));
      std::cout.precision(9);
      std::cout << to_string(r.mode) << ' ' << r.value << " (" << r.pairs << " pairs)\n";
    } else if (*report) {
      cmd_report(report_in, report_out);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
