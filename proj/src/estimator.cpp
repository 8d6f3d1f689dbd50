#include "planelio/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "planelio/error.hpp"

namespace planelio {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Window and prior

int WindowState::slot_of(int id) const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

const ImuState& WindowState::state_of(int id) const {
  const int s = slot_of(id);
  if (s < 0) throw std::out_of_range("node " + std::to_string(id) + " not in window");
  return nodes[static_cast<std::size_t>(s)].state;
}

namespace {

Eigen::Matrix<double, 6, 1> extrinsic_difference(const Pose& a, const Pose& b) {
  Eigen::Matrix<double, 6, 1> d;
  d.head<3>() = b.p - a.p;
  d.tail<3>() = rot::log_map(a.q.conjugate() * b.q);
  return d;
}

Pose retract_extrinsic(const Pose& x, const Eigen::Matrix<double, 6, 1>& dx) {
  return {x.p + dx.head<3>(), rot::quat_mul(x.q, rot::exp_map(dx.tail<3>()))};
}

}  // namespace

VectorXd Prior::delta(const WindowState& window) const {
  VectorXd d(dim());
  for (std::size_t i = 0; i < node_ids.size(); ++i) {
    d.segment<15>(15 * static_cast<Eigen::Index>(i)) = local_difference(lin_states[i], window.state_of(node_ids[i]));
  }
  if (covers_extrinsic) d.tail<6>() = extrinsic_difference(lin_extrinsic, window.extrinsic);
  return d;
}

double Prior::cost(const WindowState& window) const {
  const VectorXd d = delta(window);
  return constant + gradient.dot(d) + 0.5 * d.dot(information * d);
}

void Prior::sqrt_form(VectorXd* r_p, MatrixXd* h_p) const {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (information + information.transpose()));
  const double tol = 1e-12 * std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1.0);
  const VectorXd lambda = es.eigenvalues().unaryExpr([&](double v) { return v > tol ? v : 0.0; });
  const VectorXd sqrt_l = lambda.cwiseSqrt();
  const VectorXd inv_sqrt_l = lambda.unaryExpr([](double v) { return v > 0.0 ? 1.0 / std::sqrt(v) : 0.0; });
  if (h_p) *h_p = sqrt_l.asDiagonal() * es.eigenvectors().transpose();
  if (r_p) *r_p = -(inv_sqrt_l.asDiagonal() * es.eigenvectors().transpose() * gradient);
}

Prior make_initial_prior(const WindowNode& node, const Pose& extrinsic, const PriorSigmas& s) {
  Prior p;
  p.node_ids = {node.id};
  p.lin_states = {node.state};
  p.lin_extrinsic = extrinsic;
  p.covers_extrinsic = s.extrinsic_p > 0.0 && s.extrinsic_rot > 0.0;
  const int n = p.covers_extrinsic ? 21 : 15;
  p.information = MatrixXd::Zero(n, n);
  for (int i = 0; i < 3; ++i) {
    p.information(es::kV + i, es::kV + i) = 1.0 / (s.v * s.v);
    p.information(es::kBg + i, es::kBg + i) = 1.0 / (s.bg * s.bg);
    p.information(es::kBa + i, es::kBa + i) = 1.0 / (s.ba * s.ba);
    if (p.covers_extrinsic) {
      p.information(15 + i, 15 + i) = 1.0 / (s.extrinsic_p * s.extrinsic_p);
      p.information(18 + i, 18 + i) = 1.0 / (s.extrinsic_rot * s.extrinsic_rot);
    }
  }
  p.gradient = VectorXd::Zero(n);
  return p;
}

// ---------------------------------------------------------------------------
// Plane-point BA factor

namespace {

Vec3 project_to_world(const Pose& body, const Pose& extrinsic, const Vec3& p) { return body * (extrinsic * p); }

struct ObservationGeometry {
  std::vector<Pose> bodies;
  std::vector<Vec3> points;
  std::vector<int> ids;
};

ObservationGeometry gather(const BAFactor& factor, const WindowState& window) {
  ObservationGeometry g;
  const auto& obs = factor.association.observations();
  g.bodies.reserve(obs.size());
  g.points.reserve(obs.size());
  g.ids.reserve(obs.size());
  for (const PlaneObservation& o : obs) {
    g.bodies.push_back(window.state_of(o.keyframe_id).pose());
    g.points.push_back(o.point);
    g.ids.push_back(o.keyframe_id);
  }
  return g;
}

std::vector<Vec3> world_points(const ObservationGeometry& g, const Pose& extrinsic) {
  std::vector<Vec3> w;
  w.reserve(g.points.size());
  for (std::size_t i = 0; i < g.points.size(); ++i) w.push_back(project_to_world(g.bodies[i], extrinsic, g.points[i]));
  return w;
}

double refit_residual(const ObservationGeometry& g, const Pose& extrinsic) {
  return fit_plane(world_points(g, extrinsic)).thickness;
}

Pose perturb_pose(const Pose& x, const Eigen::Matrix<double, 6, 1>& d) {
  return {x.p + d.head<3>(), rot::quat_mul(x.q, rot::exp_map(d.tail<3>()))};
}

}  // namespace

std::vector<Vec3> ba_world_points(const BAFactor& factor, const WindowState& window) {
  return world_points(gather(factor, window), window.extrinsic);
}

double ba_residual(const BAFactor& factor, const WindowState& window) {
  return fit_plane(ba_world_points(factor, window)).thickness;
}

double ba_residual_frozen(const BAFactor& factor, const WindowState& window, const Vec3& n, double d) {
  return plane_thickness(n, d, ba_world_points(factor, window));
}

BAJacobian ba_jacobians(const BAFactor& factor, const WindowState& window, JacobianMode mode) {
  const ObservationGeometry g = gather(factor, window);
  const std::vector<Vec3> pw = world_points(g, window.extrinsic);
  BAJacobian j;
  j.plane = fit_plane(pw);
  j.residual = j.plane.thickness;
  j.node_ids = g.ids;
  j.node_blocks.resize(g.ids.size());
  const std::size_t n_obs = pw.size();

  if (mode == JacobianMode::kFrozenPlane) {
    const double inv_n = 1.0 / static_cast<double>(n_obs);
    const Vec3& n = j.plane.n;
    const Mat3 r_rb = window.extrinsic.q.toRotationMatrix();
    for (std::size_t i = 0; i < n_obs; ++i) {
      const double eps = n.dot(pw[i]) + j.plane.d;
      const Eigen::RowVector3d jp = 2.0 * inv_n * eps * n.transpose();
      const Mat3 r_wb = g.bodies[i].q.toRotationMatrix();
      const Vec3 pb = window.extrinsic * g.points[i];
      j.node_blocks[i].head<3>() = jp;
      j.node_blocks[i].tail<3>() = -jp * r_wb * rot::skew(pb);
      j.extrinsic.head<3>() += jp * r_wb;
      j.extrinsic.tail<3>() += -jp * r_wb * r_rb * rot::skew(g.points[i]);
    }
    return j;
  }

  // Central differences of the refitting residual.
  constexpr double h = 1e-6;
  for (std::size_t i = 0; i < n_obs; ++i) {
    ObservationGeometry pert = g;
    for (int k = 0; k < 6; ++k) {
      Eigen::Matrix<double, 6, 1> d = Eigen::Matrix<double, 6, 1>::Zero();
      d(k) = h;
      pert.bodies[i] = perturb_pose(g.bodies[i], d);
      const double fp = refit_residual(pert, window.extrinsic);
      pert.bodies[i] = perturb_pose(g.bodies[i], -d);
      const double fm = refit_residual(pert, window.extrinsic);
      j.node_blocks[i](k) = (fp - fm) / (2.0 * h);
    }
  }
  for (int k = 0; k < 6; ++k) {
    Eigen::Matrix<double, 6, 1> d = Eigen::Matrix<double, 6, 1>::Zero();
    d(k) = h;
    const double fp = refit_residual(g, perturb_pose(window.extrinsic, d));
    const double fm = refit_residual(g, perturb_pose(window.extrinsic, -d));
    j.extrinsic(k) = (fp - fm) / (2.0 * h);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Normal equations

namespace {

struct HuberTerm {
  double cost;    // 1/2 rho(e^2)
  double weight;  // rho'(e^2)
};

HuberTerm huber(double e, double k) {
  const double a = std::abs(e);
  if (a <= k) return {0.5 * e * e, 1.0};
  return {0.5 * (2.0 * k * a - k * k), k / a};
}

Eigen::Matrix<double, 15, 15> sqrt_information(const Mat15& cov) {
  Mat15 c = 0.5 * (cov + cov.transpose());
  c.diagonal().array() += 1e-18;
  const Mat15 info = c.ldlt().solve(Mat15::Identity());
  Eigen::LLT<Mat15> llt(0.5 * (info + info.transpose()));
  return llt.matrixU();
}

struct Linearization {
  MatrixXd h;
  VectorXd g;
  double cost = 0.0;
};

class Assembler {
 public:
  Assembler(const WindowState& window, const WorldConfig& world, const EstimatorConfig& config)
      : window_(window), world_(world), config_(config) {}

  // Adds 1/2 w |e|^2-style contributions of one BA factor. Returns the
  // whitened residual, or NaN when the factor is degenerate.
  double add_ba(const BAFactor& f, Linearization* lin) const {
    BAJacobian j;
    try {
      j = ba_jacobians(f, window_, config_.jacobian_mode);
    } catch (const Error&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
    const double sigma = std::sqrt(f.variance());
    const double e = j.residual / sigma;
    const HuberTerm hub = huber(e, config_.huber_k);
    if (!lin) return e;
    lin->cost += hub.cost;

    // Collapse rows by node (one observation per keyframe, but stay general).
    const int ext = window_.extrinsic_offset();
    std::vector<std::pair<int, Row6>> blocks;
    blocks.reserve(j.node_ids.size() + 1);
    for (std::size_t i = 0; i < j.node_ids.size(); ++i) {
      blocks.emplace_back(15 * window_.slot_of(j.node_ids[i]), j.node_blocks[i] / sigma);
    }
    blocks.emplace_back(ext, j.extrinsic / sigma);
    for (std::size_t a = 0; a < blocks.size(); ++a) {
      const auto& [oa, ja] = blocks[a];
      lin->g.segment<6>(oa) += hub.weight * e * ja.transpose();
      for (std::size_t b = a; b < blocks.size(); ++b) {
        const auto& [ob, jb] = blocks[b];
        const Eigen::Matrix<double, 6, 6> blk = hub.weight * ja.transpose() * jb;
        lin->h.block<6, 6>(oa, ob) += blk;
        if (oa != ob) {
          lin->h.block<6, 6>(ob, oa) += blk.transpose();
        } else if (a != b) {
          lin->h.block<6, 6>(oa, ob) += blk.transpose();
        }
      }
    }
    return e;
  }

  double add_preint(const PreintFactor& f, Linearization* lin) const {
    const ImuState& xi = window_.state_of(f.from_id);
    const ImuState& xj = window_.state_of(f.to_id);
    const Mat15 l = sqrt_information(f.delta.cov);
    const Vec15 r = l * preintegration_residual(xi, xj, f.delta, world_);
    if (!lin) return r.norm();
    Mat15 ji, jj;
    preintegration_jacobians(xi, xj, f.delta, world_, &ji, &jj);
    ji = l * ji;
    jj = l * jj;
    const int oi = 15 * window_.slot_of(f.from_id);
    const int oj = 15 * window_.slot_of(f.to_id);
    lin->cost += 0.5 * r.squaredNorm();
    lin->g.segment<15>(oi) += ji.transpose() * r;
    lin->g.segment<15>(oj) += jj.transpose() * r;
    lin->h.block<15, 15>(oi, oi) += ji.transpose() * ji;
    lin->h.block<15, 15>(oj, oj) += jj.transpose() * jj;
    const Mat15 hij = ji.transpose() * jj;
    lin->h.block<15, 15>(oi, oj) += hij;
    lin->h.block<15, 15>(oj, oi) += hij.transpose();
    return r.norm();
  }

  void add_prior(const Prior& p, Linearization* lin) const {
    const VectorXd d = p.delta(window_);
    const VectorXd hd = p.information * d;
    lin->cost += p.constant + p.gradient.dot(d) + 0.5 * d.dot(hd);
    const VectorXd grad = p.gradient + hd;
    std::vector<int> offsets;
    std::vector<int> sizes;
    for (int id : p.node_ids) {
      offsets.push_back(15 * window_.slot_of(id));
      sizes.push_back(15);
    }
    if (p.covers_extrinsic) {
      offsets.push_back(window_.extrinsic_offset());
      sizes.push_back(6);
    }
    int ra = 0;
    for (std::size_t a = 0; a < offsets.size(); ++a) {
      lin->g.segment(offsets[a], sizes[a]) += grad.segment(ra, sizes[a]);
      int rb = 0;
      for (std::size_t b = 0; b < offsets.size(); ++b) {
        lin->h.block(offsets[a], offsets[b], sizes[a], sizes[b]) += p.information.block(ra, rb, sizes[a], sizes[b]);
        rb += sizes[b];
      }
      ra += sizes[a];
    }
  }

  Linearization linearize(const std::vector<BAFactor>& ba, const std::vector<PreintFactor>& preint,
                          std::vector<double>* ba_whitened = nullptr,
                          std::vector<double>* preint_whitened = nullptr) const {
    Linearization lin;
    const int n = window_.dim();
    lin.h = MatrixXd::Zero(n, n);
    lin.g = VectorXd::Zero(n);
    if (ba_whitened) ba_whitened->clear();
    if (preint_whitened) preint_whitened->clear();
    for (const BAFactor& f : ba) {
      const double e = add_ba(f, &lin);
      if (ba_whitened) ba_whitened->push_back(e);
    }
    for (const PreintFactor& f : preint) {
      const double e = add_preint(f, &lin);
      if (preint_whitened) preint_whitened->push_back(e);
    }
    if (window_.prior) add_prior(*window_.prior, &lin);
    return lin;
  }

 private:
  const WindowState& window_;
  const WorldConfig& world_;
  const EstimatorConfig& config_;
};

std::vector<int> free_indices(const WindowState& window, const EstimatorConfig& config, bool has_ba) {
  std::vector<int> idx;
  const int n_nodes = static_cast<int>(window.nodes.size());
  for (int s = 0; s < n_nodes; ++s) {
    for (int k = 0; k < 15; ++k) {
      if (!window.anchored && s == 0 && k < 6) continue;
      idx.push_back(15 * s + k);
    }
  }
  if (config.estimate_extrinsic && (has_ba || (window.prior && window.prior->covers_extrinsic))) {
    for (int k = 0; k < 6; ++k) idx.push_back(window.extrinsic_offset() + k);
  }
  return idx;
}

void apply_update(WindowState& window, const VectorXd& dx) {
  for (std::size_t s = 0; s < window.nodes.size(); ++s) {
    window.nodes[s].state = retract(window.nodes[s].state, dx.segment<15>(15 * static_cast<Eigen::Index>(s)));
  }
  window.extrinsic = retract_extrinsic(window.extrinsic, dx.segment<6>(window.extrinsic_offset()));
}

}  // namespace

double total_cost(const WindowState& window, const std::vector<BAFactor>& ba,
                  const std::vector<PreintFactor>& preint, const WorldConfig& world,
                  const EstimatorConfig& config) {
  double cost = 0.0;
  for (const BAFactor& f : ba) {
    double r;
    try {
      r = ba_residual(f, window);
    } catch (const Error&) {
      continue;
    }
    cost += huber(r / std::sqrt(f.variance()), config.huber_k).cost;
  }
  for (const PreintFactor& f : preint) {
    const Vec15 r = sqrt_information(f.delta.cov) *
                    preintegration_residual(window.state_of(f.from_id), window.state_of(f.to_id), f.delta, world);
    cost += 0.5 * r.squaredNorm();
  }
  if (window.prior) cost += window.prior->cost(window);
  return cost;
}

constexpr double kMinGainRatio = 1e-3;

SolveReport solve(WindowState& window, const std::vector<BAFactor>& ba, const std::vector<PreintFactor>& preint,
                  const WorldConfig& world, const EstimatorConfig& config) {
  SolveReport report;
  if (window.nodes.size() < 2 || (ba.empty() && preint.empty())) {
    report.termination = "nothing to solve";
    return report;
  }
  const std::vector<int> free = free_indices(window, config, !ba.empty());
  const auto nf = static_cast<Eigen::Index>(free.size());

  Linearization lin = Assembler(window, world, config).linearize(ba, preint);
  double cost = lin.cost;
  report.initial_cost = cost;
  if (!std::isfinite(cost)) throw Error(ErrorKind::kSolverDiverged, "cost is not finite at the initial estimate");
  double lambda = config.initial_damping;
  double nu = 2.0;
  bool accepted_any = false;
  report.termination = "max iterations";

  for (int iter = 0; iter < config.max_iterations; ++iter) {
    MatrixXd hr(nf, nf);
    VectorXd gr(nf);
    for (Eigen::Index a = 0; a < nf; ++a) {
      gr(a) = lin.g(free[a]);
      for (Eigen::Index b = 0; b < nf; ++b) hr(a, b) = lin.h(free[a], free[b]);
    }
    MatrixXd damped = hr;
    for (Eigen::Index a = 0; a < nf; ++a) damped(a, a) += lambda * std::clamp(hr(a, a), 1e-6, 1e32);
    const VectorXd step = damped.ldlt().solve(-gr);

    if (step.allFinite() && step.norm() < config.update_tol) {
      report.termination = "update below tolerance";
      break;
    }
    ++report.iterations;

    double new_cost = std::numeric_limits<double>::infinity();
    WindowState candidate = window;
    if (step.allFinite()) {
      VectorXd dx = VectorXd::Zero(window.dim());
      for (Eigen::Index a = 0; a < nf; ++a) dx(free[a]) = step(a);
      apply_update(candidate, dx);
      new_cost = total_cost(candidate, ba, preint, world, config);
    }
    const double predicted = -(gr.dot(step) + 0.5 * step.dot(hr * step));
    // Gain ratio. Steps along near-null directions predict a decrease they
    // never deliver; rejecting them raises the damping instead.
    const double rho = predicted > 0.0 ? (cost - new_cost) / predicted : 1.0;

    if (std::isfinite(new_cost) && new_cost < cost && rho > kMinGainRatio) {
      const double rel = (cost - new_cost) / std::max(cost, std::numeric_limits<double>::min());
      lambda *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
      lambda = std::max(lambda, 1e-12);
      nu = 2.0;
      window = std::move(candidate);
      cost = new_cost;
      accepted_any = true;
      if (rel < config.rel_cost_tol) {
        report.termination = "relative cost decrease below tolerance";
        break;
      }
      lin = Assembler(window, world, config).linearize(ba, preint);
      cost = lin.cost;
    } else {
      lambda *= nu;
      nu *= 2.0;
      if (lambda > config.max_damping) {
        // No step improves the cost. That is convergence when the model
        // itself predicts nothing meaningful is left to gain.
        if (accepted_any || !(predicted > config.rel_cost_tol * std::max(cost, 1e-300)) || cost < 1e-20) {
          report.termination = "damping limit";
          break;
        }
        throw Error(ErrorKind::kSolverDiverged, "damping exceeded the limit without a cost decrease");
      }
    }
  }

  report.final_cost = total_cost(window, ba, preint, world, config);
  Assembler(window, world, config).linearize(ba, preint, &report.ba_whitened, &report.preint_whitened);
  return report;
}

TwoStepReport two_step_optimize(WindowState& window, std::vector<BAFactor>& ba,
                                const std::vector<PreintFactor>& preint, const WorldConfig& world,
                                const EstimatorConfig& config) {
  TwoStepReport report;
  EstimatorConfig step1 = config;
  step1.max_iterations = config.step1_iterations;
  report.step1 = solve(window, ba, preint, world, step1);

  std::vector<BAFactor> survivors;
  survivors.reserve(ba.size());
  const Assembler assembler(window, world, config);
  for (std::size_t i = 0; i < ba.size(); ++i) {
    const double e = assembler.add_ba(ba[i], nullptr);
    if (std::isfinite(e) && std::abs(e) <= config.chi1d_threshold) {
      survivors.push_back(std::move(ba[i]));
    } else {
      report.removed.push_back(i);
    }
  }
  ba = std::move(survivors);
  report.step2 = solve(window, ba, preint, world, config);
  return report;
}

MarginalizationReport marginalize_oldest(WindowState& window, std::vector<BAFactor>& ba,
                                         std::vector<PreintFactor>& preint, const WorldConfig& world,
                                         const EstimatorConfig& config) {
  MarginalizationReport report;
  if (window.nodes.empty()) return report;
  const int oldest = window.nodes.front().id;
  report.removed_node_id = oldest;

  std::vector<BAFactor> ba_marg, ba_keep;
  for (BAFactor& f : ba) {
    const auto& obs = f.association.observations();
    const bool touches = std::any_of(obs.begin(), obs.end(),
                                     [&](const PlaneObservation& o) { return o.keyframe_id == oldest; });
    (touches ? ba_marg : ba_keep).push_back(std::move(f));
  }
  std::vector<PreintFactor> pre_marg, pre_keep;
  for (PreintFactor& f : preint) {
    const bool touches = f.from_id == oldest || f.to_id == oldest;
    (touches ? pre_marg : pre_keep).push_back(std::move(f));
  }
  const bool prior_touches =
      window.prior && std::find(window.prior->node_ids.begin(), window.prior->node_ids.end(), oldest) !=
                          window.prior->node_ids.end();
  report.ba_factors_marginalized = static_cast<int>(ba_marg.size());
  report.preint_factors_marginalized = static_cast<int>(pre_marg.size());

  const bool anything = !ba_marg.empty() || !pre_marg.empty() || prior_touches;
  if (!anything) {
    window.nodes.erase(window.nodes.begin());
    ba = std::move(ba_keep);
    preint = std::move(pre_keep);
    return report;
  }

  // Quadratic model of everything touching the oldest node. The existing
  // prior is folded in whole; entries not coupled to the oldest node pass
  // through the Schur complement unchanged.
  WindowState no_prior = window;
  no_prior.prior.reset();
  Linearization lin = Assembler(no_prior, world, config).linearize(ba_marg, pre_marg);
  const Eigen::Index ext = window.extrinsic_offset();
  if (!config.estimate_extrinsic) {
    // A held extrinsic is a constant here. Folding its BA information in
    // would leave a stale pull behind for when it is released.
    lin.h.middleRows(ext, 6).setZero();
    lin.h.middleCols(ext, 6).setZero();
    lin.g.segment(ext, 6).setZero();
  }
  if (window.prior) Assembler(window, world, config).add_prior(*window.prior, &lin);
  if (!window.anchored) {
    for (int k = 0; k < 6; ++k) lin.h(k, k) += config.anchor_information;
  }

  const Eigen::Index n = window.dim();
  const Eigen::Index m = 15;
  const Eigen::Index r = n - m;
  MatrixXd hmm = lin.h.topLeftCorner(m, m);
  hmm = 0.5 * (hmm + hmm.transpose());
  hmm.diagonal().array() += config.marginalization_regularizer;
  Eigen::LLT<MatrixXd> llt(hmm);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::kSingularInformation, "oldest-node information block is not positive definite");
  }
  const MatrixXd hrm = lin.h.bottomLeftCorner(r, m);
  const VectorXd gm = lin.g.head(m);
  const MatrixXd hmm_inv_hmr = llt.solve(hrm.transpose());
  const VectorXd hmm_inv_gm = llt.solve(gm);

  Prior prior;
  prior.information = lin.h.bottomRightCorner(r, r) - hrm * hmm_inv_hmr;
  prior.information = 0.5 * (prior.information + prior.information.transpose());
  prior.gradient = lin.g.tail(r) - hrm * hmm_inv_gm;
  prior.constant = lin.cost - 0.5 * gm.dot(hmm_inv_gm);
  prior.covers_extrinsic = config.estimate_extrinsic || (window.prior && window.prior->covers_extrinsic);
  prior.lin_extrinsic = window.extrinsic;
  for (std::size_t s = 1; s < window.nodes.size(); ++s) {
    prior.node_ids.push_back(window.nodes[s].id);
    prior.lin_states.push_back(window.nodes[s].state);
  }

  window.nodes.erase(window.nodes.begin());
  window.prior = std::move(prior);
  window.anchored = true;
  ba = std::move(ba_keep);
  preint = std::move(pre_keep);
  return report;
}

namespace {

// Marginal covariance of the six error-state entries starting at `first`.
Eigen::Matrix<double, 6, 6> block_covariance(const WindowState& window, const std::vector<BAFactor>& ba,
                                             const std::vector<PreintFactor>& preint, const WorldConfig& world,
                                             const EstimatorConfig& config, int first) {
  const Linearization lin = Assembler(window, world, config).linearize(ba, preint);
  const std::vector<int> free = free_indices(window, config, !ba.empty());
  const auto nf = static_cast<Eigen::Index>(free.size());
  MatrixXd hr(nf, nf);
  for (Eigen::Index a = 0; a < nf; ++a) {
    for (Eigen::Index b = 0; b < nf; ++b) hr(a, b) = lin.h(free[a], free[b]);
  }
  // Jacobi scaling first; preintegration bias terms sit ten orders above
  // weakly observed directions.
  const VectorXd sc = hr.diagonal().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
  MatrixXd hs = sc.asDiagonal() * hr * sc.asDiagonal();
  hs.diagonal().array() += 1e-12;
  const MatrixXd cov = sc.asDiagonal() * hs.ldlt().solve(MatrixXd::Identity(nf, nf)) * sc.asDiagonal();
  Eigen::Matrix<double, 6, 6> out = Eigen::Matrix<double, 6, 6>::Zero();
  for (Eigen::Index a = 0; a < nf; ++a) {
    const int ia = free[a] - first;
    if (ia < 0 || ia >= 6) continue;
    for (Eigen::Index b = 0; b < nf; ++b) {
      const int ib = free[b] - first;
      if (ib >= 0 && ib < 6) out(ia, ib) = cov(a, b);
    }
  }
  return out;
}

}  // namespace

Eigen::Matrix<double, 6, 6> pose_covariance(const WindowState& window, const std::vector<BAFactor>& ba,
                                            const std::vector<PreintFactor>& preint, const WorldConfig& world,
                                            const EstimatorConfig& config, int slot) {
  return block_covariance(window, ba, preint, world, config, 15 * slot);
}

Eigen::Matrix<double, 6, 6> extrinsic_covariance(const WindowState& window, const std::vector<BAFactor>& ba,
                                                 const std::vector<PreintFactor>& preint, const WorldConfig& world,
                                                 const EstimatorConfig& config) {
  EstimatorConfig free_ext = config;
  free_ext.estimate_extrinsic = true;
  return block_covariance(window, ba, preint, world, free_ext, window.extrinsic_offset());
}

int repropagate_preintegration(const WindowState& window, std::vector<PreintFactor>& preint,
                               const WorldConfig& world, const EstimatorConfig& config) {
  int count = 0;
  for (PreintFactor& f : preint) {
    if (f.samples.size() < 2) continue;
    const ImuState& x = window.state_of(f.from_id);
    if ((x.bg - f.delta.lin_bg).norm() > config.repropagate_bg ||
        (x.ba - f.delta.lin_ba).norm() > config.repropagate_ba) {
      f.delta = preintegrate(f.samples, x.bg, x.ba, world);
      ++count;
    }
  }
  return count;
}

}  // namespace planelio
