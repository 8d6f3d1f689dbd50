#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "planelio/association.hpp"
#include "planelio/imu.hpp"

namespace planelio {

using Row6 = Eigen::Matrix<double, 1, 6>;

enum class JacobianMode {
  kFrozenPlane,  ///< analytic, plane parameters held fixed
  kFull,         ///< central differences of the residual with the plane refit
};

struct EstimatorConfig {
  int window_size = 10;          ///< n; the window holds up to n + 1 nodes
  double huber_k = 1.345;        ///< on whitened BA residuals
  double chi1d_threshold = 3.0;  ///< two-step culling gate on whitened BA residuals
  int max_iterations = 30;
  int step1_iterations = 5;
  double rel_cost_tol = 1e-8;
  double update_tol = 1e-10;
  double initial_damping = 1e-4;
  double max_damping = 1e12;
  JacobianMode jacobian_mode = JacobianMode::kFrozenPlane;
  bool estimate_extrinsic = true;
  double marginalization_regularizer = 1e-8;
  /// Information placed on the first node's pose when it is marginalized
  /// before any prior anchors the window.
  double anchor_information = 1e10;
  double repropagate_bg = 1e-3;  ///< rad/s bias change that triggers re-preintegration
  double repropagate_ba = 2e-2;  ///< m/s^2
};

struct WindowNode {
  int id = -1;
  ImuState state;
};

struct WindowState;

/// Linear prior left by marginalization. Its cost at a state x is
///   c + g^T dx + 1/2 dx^T H dx,  dx = x [-] x_lin,
/// over the listed nodes and, optionally, the extrinsic.
struct Prior {
  std::vector<int> node_ids;
  std::vector<ImuState> lin_states;
  bool covers_extrinsic = false;
  Pose lin_extrinsic;
  Eigen::MatrixXd information;
  Eigen::VectorXd gradient;
  double constant = 0.0;

  int dim() const { return 15 * static_cast<int>(node_ids.size()) + (covers_extrinsic ? 6 : 0); }
  Eigen::VectorXd delta(const WindowState& window) const;
  double cost(const WindowState& window) const;

  /// Square-root form (r_p, H_p) with cost = const' + 1/2 |r_p - H_p dx|^2.
  void sqrt_form(Eigen::VectorXd* r_p, Eigen::MatrixXd* h_p) const;
};

struct WindowState {
  std::vector<WindowNode> nodes;
  Pose extrinsic;  ///< LiDAR -> body
  double t_d = 0.0;
  std::optional<Prior> prior;
  /// False until the first marginalization; the first node's pose is held
  /// fixed while false.
  bool anchored = false;

  int slot_of(int id) const;
  const ImuState& state_of(int id) const;
  int dim() const { return 15 * static_cast<int>(nodes.size()) + 6; }
  int extrinsic_offset() const { return 15 * static_cast<int>(nodes.size()); }
};

struct PriorSigmas {
  double v = 0.05;             ///< m/s
  double bg = 5e-3;            ///< rad/s
  double ba = 0.1;             ///< m/s^2
  double extrinsic_p = 0.1;    ///< m, zero leaves the extrinsic out
  double extrinsic_rot = 0.0873;  ///< rad, zero leaves the extrinsic out
};

/// Prior on the first node's velocity and biases, and on the extrinsic
/// calibration, around their current values.
Prior make_initial_prior(const WindowNode& node, const Pose& extrinsic, const PriorSigmas& sigmas);

struct BAFactor {
  SamePlaneAssociation association;
  int tag = 0;  ///< caller-defined marker, carried through culling
  double variance() const { return association.variance(); }
};

struct PreintFactor {
  int from_id = -1;
  int to_id = -1;
  PreintegrationDelta delta;
  std::vector<ImuSample> samples;
};

/// World-frame projections of the factor's observations.
std::vector<Vec3> ba_world_points(const BAFactor& factor, const WindowState& window);

/// Mean squared distance of the projected observations to their refit
/// plane. Throws Error(kDegenerateGeometry).
double ba_residual(const BAFactor& factor, const WindowState& window);

/// Same residual with the plane held at (n, d).
double ba_residual_frozen(const BAFactor& factor, const WindowState& window, const Vec3& n, double d);

struct BAJacobian {
  std::vector<int> node_ids;     ///< one per observation
  std::vector<Row6> node_blocks; ///< d r / d (dp, dphi) of that node
  Row6 extrinsic = Row6::Zero(); ///< d r / d (dp_br, dphi_rb)
  double residual = 0.0;
  Plane plane;
};

BAJacobian ba_jacobians(const BAFactor& factor, const WindowState& window,
                        JacobianMode mode = JacobianMode::kFrozenPlane);

struct SolveReport {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::vector<double> ba_whitened;       ///< |r| / sigma per BA factor; NaN if dropped
  std::vector<double> preint_whitened;   ///< whitened residual norm per preint factor
  std::string termination;
};

/// Total cost (robust BA + preintegration + prior) at the window's estimate.
double total_cost(const WindowState& window, const std::vector<BAFactor>& ba,
                  const std::vector<PreintFactor>& preint, const WorldConfig& world, const EstimatorConfig& config);

/// Levenberg-Marquardt over the window. Throws Error(kSolverDiverged).
SolveReport solve(WindowState& window, const std::vector<BAFactor>& ba, const std::vector<PreintFactor>& preint,
                  const WorldConfig& world, const EstimatorConfig& config);

struct TwoStepReport {
  SolveReport step1;
  SolveReport step2;
  std::vector<std::size_t> removed;  ///< indices into the input BA list
};

/// Short solve, drop BA factors whose whitened residual exceeds the gate,
/// then a full solve on the survivors. `ba` is replaced by the survivors.
TwoStepReport two_step_optimize(WindowState& window, std::vector<BAFactor>& ba,
                                const std::vector<PreintFactor>& preint, const WorldConfig& world,
                                const EstimatorConfig& config);

struct MarginalizationReport {
  int removed_node_id = -1;
  int ba_factors_marginalized = 0;
  int preint_factors_marginalized = 0;
};

/// Schur-complements the oldest node out of the window. Factors touching it
/// are folded into the prior and removed from the lists.
/// Throws Error(kSingularInformation).
MarginalizationReport marginalize_oldest(WindowState& window, std::vector<BAFactor>& ba,
                                         std::vector<PreintFactor>& preint, const WorldConfig& world,
                                         const EstimatorConfig& config);

/// Marginal covariance of one node's (dp, dphi) from the current normal
/// equations, with the same gauge handling as solve().
Eigen::Matrix<double, 6, 6> pose_covariance(const WindowState& window, const std::vector<BAFactor>& ba,
                                            const std::vector<PreintFactor>& preint, const WorldConfig& world,
                                            const EstimatorConfig& config, int slot);

/// Marginal covariance of the extrinsic (dp, dphi) as if it were free, zero
/// when nothing constrains it yet.
Eigen::Matrix<double, 6, 6> extrinsic_covariance(const WindowState& window, const std::vector<BAFactor>& ba,
                                                 const std::vector<PreintFactor>& preint, const WorldConfig& world,
                                                 const EstimatorConfig& config);

/// Re-preintegrates factors whose linearization bias drifted past the
/// configured thresholds. Returns the number refreshed.
int repropagate_preintegration(const WindowState& window, std::vector<PreintFactor>& preint,
                               const WorldConfig& world, const EstimatorConfig& config);

}  // namespace planelio
