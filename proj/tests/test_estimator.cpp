#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "planelio/error.hpp"
#include "planelio/estimator.hpp"
#include "support/synthetic_window.hpp"

using namespace planelio;
using planelio::testing::make_synthetic_window;
using planelio::testing::perturb_nodes;
using planelio::testing::SyntheticSpec;

namespace {

using Vec6 = Eigen::Matrix<double, 6, 1>;

// Mean squared distance to the total-least-squares plane, computed from
// scratch with a full eigen decomposition.
double residual_oracle(const BAFactor& f, const WindowState& w) {
  std::vector<Vec3> pts;
  for (const PlaneObservation& o : f.association.observations()) {
    const ImuState& x = w.state_of(o.keyframe_id);
    const Vec3 pb = w.extrinsic.q.toRotationMatrix() * o.point + w.extrinsic.p;
    pts.push_back(x.q.toRotationMatrix() * pb + x.p);
  }
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  Mat3 s = Mat3::Zero();
  for (const Vec3& p : pts) s += (p - c) * (p - c).transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> es(s);
  return es.eigenvalues()(0) / static_cast<double>(pts.size());
}

WindowState perturb_node(const WindowState& w, std::size_t slot, const Vec6& d) {
  WindowState out = w;
  Vec15 dx = Vec15::Zero();
  dx.head<6>() = d;
  out.nodes[slot].state = retract(out.nodes[slot].state, dx);
  return out;
}

WindowState perturb_extrinsic(const WindowState& w, const Vec6& d) {
  WindowState out = w;
  out.extrinsic.p += d.head<3>();
  out.extrinsic.q = rot::quat_mul(w.extrinsic.q, rot::exp_map(d.tail<3>()));
  return out;
}

// Central differences of a residual functional w.r.t. every pose block.
template <typename F>
BAJacobian numeric_jacobian(const BAFactor& f, const WindowState& w, F residual) {
  constexpr double h = 1e-6;
  BAJacobian j;
  for (const PlaneObservation& o : f.association.observations()) {
    const auto slot = static_cast<std::size_t>(w.slot_of(o.keyframe_id));
    Row6 row;
    for (int k = 0; k < 6; ++k) {
      Vec6 d = Vec6::Zero();
      d(k) = h;
      row(k) = (residual(perturb_node(w, slot, d)) - residual(perturb_node(w, slot, -d))) / (2 * h);
    }
    j.node_ids.push_back(o.keyframe_id);
    j.node_blocks.push_back(row);
  }
  for (int k = 0; k < 6; ++k) {
    Vec6 d = Vec6::Zero();
    d(k) = h;
    j.extrinsic(k) = (residual(perturb_extrinsic(w, d)) - residual(perturb_extrinsic(w, -d))) / (2 * h);
  }
  return j;
}

double max_relative_error(const BAJacobian& a, const BAJacobian& b) {
  double scale = b.extrinsic.cwiseAbs().maxCoeff();
  for (const Row6& r : b.node_blocks) scale = std::max(scale, r.cwiseAbs().maxCoeff());
  double err = (a.extrinsic - b.extrinsic).cwiseAbs().maxCoeff();
  for (std::size_t i = 0; i < a.node_blocks.size(); ++i) {
    err = std::max(err, (a.node_blocks[i] - b.node_blocks[i]).cwiseAbs().maxCoeff());
  }
  return err / scale;
}

// Five nodes at distinct positions, identity attitude and extrinsic, each
// seeing one point of the plane z = 0.
struct SquareFixture {
  WindowState window;
  BAFactor factor;
  SquareFixture()
      : factor{SamePlaneAssociation({{0, {1, 1, 0}}, {1, {1, -1, 0}}, {2, {-1, 1, 0}}, {3, {-1, -1, 0}}, {4, {0, 0, 0}}},
                                    4, 1e-6),
               0} {
    for (int i = 0; i < 5; ++i) {
      ImuState s;
      s.t = i;
      window.nodes.push_back({i, s});
    }
  }
};

double position_error(const WindowState& a, const WindowState& b) {
  double e = 0.0;
  for (std::size_t s = 0; s < a.nodes.size(); ++s) e = std::max(e, (a.nodes[s].state.p - b.nodes[s].state.p).norm());
  return e;
}

double attitude_error(const WindowState& a, const WindowState& b) {
  double e = 0.0;
  for (std::size_t s = 0; s < a.nodes.size(); ++s) {
    e = std::max(e, rot::angle(a.nodes[s].state.q.conjugate() * b.nodes[s].state.q));
  }
  return e;
}

}  // namespace

TEST(BAResidual, ZeroAtTruth) {
  const auto sw = make_synthetic_window({});
  for (const BAFactor& f : sw.ba) EXPECT_LT(ba_residual(f, sw.truth), 1e-12);
}

TEST(BAResidual, RaisedCenterPointHandComputed) {
  SquareFixture fx;
  fx.window.nodes[4].state.p.z() = 0.01;
  // The refit plane stays horizontal and moves up by h/5, so
  // 4 (h/5)^2 + (4h/5)^2 over five points is 4h^2/25.
  EXPECT_NEAR(ba_residual(fx.factor, fx.window), 4.0 * 1e-4 / 25.0, 1e-15);
  // With the plane frozen at z = 0 only the moved point contributes.
  EXPECT_NEAR(ba_residual_frozen(fx.factor, fx.window, Vec3::UnitZ(), 0.0), 1e-4 / 5.0, 1e-15);
}

TEST(BAResidual, MatchesDirectSubstitution) {
  SyntheticSpec spec;
  spec.point_sigma = 0.02;
  auto sw = make_synthetic_window(spec);
  std::mt19937_64 rng(3);
  perturb_nodes(sw.truth, rng, 0.05, 0.02, false);
  for (const BAFactor& f : sw.ba) {
    const double oracle = residual_oracle(f, sw.truth);
    EXPECT_NEAR(ba_residual(f, sw.truth), oracle, 1e-10 * std::max(oracle, 1e-6));
  }
}

TEST(BAResidual, DegenerateFactorThrows) {
  SquareFixture fx;
  // Collapse all points onto the x axis.
  for (std::size_t i = 0; i < 5; ++i) fx.factor.association.displace(i, Vec3(static_cast<double>(i), 0, 0));
  for (auto& n : fx.window.nodes) n.state.p.setZero();
  EXPECT_THROW(ba_residual(fx.factor, fx.window), Error);
}

TEST(BAJacobians, ZeroAtZeroResidual) {
  const auto sw = make_synthetic_window({});
  for (const BAFactor& f : sw.ba) {
    const BAJacobian j = ba_jacobians(f, sw.truth);
    EXPECT_LT(j.extrinsic.norm(), 1e-9);
    for (const Row6& r : j.node_blocks) EXPECT_LT(r.norm(), 1e-9);
  }
}

TEST(BAJacobians, FrozenPlaneMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    SyntheticSpec spec;
    spec.seed = 100 + trial;
    spec.point_sigma = 0.03;
    spec.ba_factors = 10;
    auto sw = make_synthetic_window(spec);
    perturb_nodes(sw.truth, rng, 0.05, 0.02, false);
    for (const BAFactor& f : sw.ba) {
      const BAJacobian a = ba_jacobians(f, sw.truth);
      const BAJacobian fd = numeric_jacobian(
          f, sw.truth, [&](const WindowState& w) { return ba_residual_frozen(f, w, a.plane.n, a.plane.d); });
      worst = std::max(worst, max_relative_error(a, fd));
    }
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(BAJacobians, FrozenPlaneCloseToRefitFiniteDifferences) {
  std::mt19937_64 rng(6);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    SyntheticSpec spec;
    spec.seed = 200 + trial;
    spec.point_sigma = 0.03;
    spec.ba_factors = 10;
    auto sw = make_synthetic_window(spec);
    perturb_nodes(sw.truth, rng, 0.05, 0.02, false);
    for (const BAFactor& f : sw.ba) {
      const BAJacobian a = ba_jacobians(f, sw.truth);
      const BAJacobian full = ba_jacobians(f, sw.truth, JacobianMode::kFull);
      worst = std::max(worst, max_relative_error(a, full));
      EXPECT_DOUBLE_EQ(a.residual, full.residual);
    }
  }
  EXPECT_LT(worst, 5e-3);
}

TEST(BAJacobians, FullModeIsDifferenceOfRefitResidual) {
  SyntheticSpec spec;
  spec.point_sigma = 0.03;
  spec.ba_factors = 5;
  const auto sw = make_synthetic_window(spec);
  for (const BAFactor& f : sw.ba) {
    const BAJacobian full = ba_jacobians(f, sw.truth, JacobianMode::kFull);
    const BAJacobian fd = numeric_jacobian(f, sw.truth, [&](const WindowState& w) { return ba_residual(f, w); });
    EXPECT_LT(max_relative_error(full, fd), 1e-9);
  }
}

TEST(Whitening, VarianceScalesWhitenedResidual) {
  SyntheticSpec spec;
  spec.point_sigma = 0.02;
  spec.ba_factors = 8;
  auto sw = make_synthetic_window(spec);
  EstimatorConfig cfg;
  cfg.max_iterations = 0;
  WindowState w = sw.truth;
  const SolveReport base = solve(w, sw.ba, sw.preint, sw.world, cfg);
  const double c = 3.0;
  std::vector<BAFactor> scaled = sw.ba;
  for (BAFactor& f : scaled) f.association.set_variance(f.variance() * c * c);
  const SolveReport after = solve(w, scaled, sw.preint, sw.world, cfg);
  ASSERT_EQ(base.ba_whitened.size(), after.ba_whitened.size());
  for (std::size_t i = 0; i < base.ba_whitened.size(); ++i) {
    EXPECT_NEAR(after.ba_whitened[i], base.ba_whitened[i] / c, 1e-12 * std::abs(base.ba_whitened[i]) + 1e-300);
    EXPECT_DOUBLE_EQ(ba_residual(scaled[i], w), ba_residual(sw.ba[i], w));
  }
}

TEST(Solve, TruthIsAlreadyOptimal) {
  auto sw = make_synthetic_window({});
  WindowState w = sw.truth;
  const SolveReport r = solve(w, sw.ba, sw.preint, sw.world, EstimatorConfig{});
  EXPECT_LT(r.final_cost, 1e-12);
  EXPECT_LT(position_error(w, sw.truth), 1e-9);
  EXPECT_LT(attitude_error(w, sw.truth), 1e-9);
}

TEST(Solve, RecoversPerturbedTruth) {
  // Plane-point factors alone, with the first pose and the extrinsic held:
  // every other pose is then fixed by the geometry.
  auto sw = make_synthetic_window({});
  WindowState w = sw.truth;
  std::mt19937_64 rng(7);
  perturb_nodes(w, rng, 0.05 / std::sqrt(3.0), (M_PI / 180.0) / std::sqrt(3.0), true);
  ASSERT_GT(position_error(w, sw.truth), 0.01);
  EstimatorConfig cfg;
  cfg.estimate_extrinsic = false;
  const SolveReport r = solve(w, sw.ba, {}, sw.world, cfg);
  EXPECT_LT(r.final_cost, 1e-16) << r.termination;
  EXPECT_LT(position_error(w, sw.truth), 1e-6);
  EXPECT_LT(attitude_error(w, sw.truth), 1e-6);
}

TEST(Solve, RecoversPerturbedTruthWithPreintegration) {
  // The stiff preintegration terms slow the quartic plane-point cost down;
  // a longer run still closes in on the truth.
  auto sw = make_synthetic_window({});
  WindowState w = sw.truth;
  std::mt19937_64 rng(7);
  perturb_nodes(w, rng, 0.05 / std::sqrt(3.0), (M_PI / 180.0) / std::sqrt(3.0), true);
  EstimatorConfig cfg;
  cfg.estimate_extrinsic = false;
  cfg.max_iterations = 100;
  const SolveReport r = solve(w, sw.ba, sw.preint, sw.world, cfg);
  EXPECT_LT(r.final_cost, 1e-14) << r.termination;
  EXPECT_LT(position_error(w, sw.truth), 1e-5);
  EXPECT_LT(attitude_error(w, sw.truth), 1e-5);
}

TEST(Solve, ExtrinsicIsGaugeWithoutMotionInformation) {
  // Plane-point factors only: the extrinsic trades off against the node
  // poses, so a zero-cost solution need not be the truth.
  auto sw = make_synthetic_window({});
  WindowState w = sw.truth;
  std::mt19937_64 rng(7);
  perturb_nodes(w, rng, 0.03, 0.01, true);
  const SolveReport r = solve(w, sw.ba, {}, sw.world, EstimatorConfig{});
  EXPECT_LT(r.final_cost, 1e-16);
}

TEST(Solve, FirstPoseHeldUntilAnchored) {
  auto sw = make_synthetic_window({});
  WindowState w = sw.truth;
  std::mt19937_64 rng(8);
  perturb_nodes(w, rng, 0.02, 0.01, false);
  const Pose first = w.nodes[0].state.pose();
  solve(w, sw.ba, sw.preint, sw.world, EstimatorConfig{});
  EXPECT_EQ(w.nodes[0].state.p, first.p);
  EXPECT_EQ(w.nodes[0].state.q.coeffs(), first.q.coeffs());
}

TEST(Solve, SinglePreintegrationFactor) {
  SyntheticSpec spec;
  spec.nodes = 2;
  spec.ba_factors = 0;
  const auto sw = make_synthetic_window(spec);
  WindowState w = sw.truth;
  // Pin the first node completely: its pose by the unanchored gauge, the
  // rest by a tight prior.
  PriorSigmas tight{1e-9, 1e-9, 1e-9, 0.0, 0.0};
  w.prior = make_initial_prior(w.nodes[0], w.extrinsic, tight);
  Vec15 dx;
  for (int i = 0; i < 15; ++i) dx(i) = 0.01 * std::sin(1.0 + i);
  w.nodes[1].state = retract(w.nodes[1].state, dx);
  const SolveReport r = solve(w, {}, sw.preint, sw.world, EstimatorConfig{});
  // The only consistent second state is the mechanized one.
  const Vec15 err = local_difference(sw.truth.nodes[1].state, w.nodes[1].state);
  EXPECT_LT(err.norm(), 1e-8) << r.termination;
  EXPECT_LT(r.final_cost, 1e-14);
  EXPECT_EQ(w.extrinsic.p, sw.truth.extrinsic.p);  // no BA, no extrinsic prior
}

TEST(Solve, NothingToSolve) {
  auto sw = make_synthetic_window({});
  WindowState one = sw.truth;
  one.nodes.resize(1);
  EXPECT_EQ(solve(one, {}, {}, sw.world, EstimatorConfig{}).iterations, 0);
}

TEST(Solve, NonFiniteStateDiverges) {
  SyntheticSpec spec;
  spec.nodes = 2;
  spec.ba_factors = 0;
  const auto sw = make_synthetic_window(spec);
  WindowState w = sw.truth;
  w.nodes[1].state.v.x() = std::numeric_limits<double>::quiet_NaN();
  try {
    solve(w, {}, sw.preint, sw.world, EstimatorConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kSolverDiverged);
  }
}

TEST(Solve, HuberCapsLargeResiduals) {
  SyntheticSpec spec;
  spec.ba_factors = 6;
  spec.point_sigma = 0.05;
  auto sw = make_synthetic_window(spec);
  EstimatorConfig quad;
  quad.huber_k = 1e9;
  EstimatorConfig hub;
  double quad_cost = 0.0, hub_cost = 0.0;
  for (const BAFactor& f : sw.ba) {
    const double e = ba_residual(f, sw.truth) / std::sqrt(f.variance());
    quad_cost += 0.5 * e * e;
    hub_cost += std::abs(e) <= 1.345 ? 0.5 * e * e : 1.345 * std::abs(e) - 0.5 * 1.345 * 1.345;
  }
  EXPECT_NEAR(total_cost(sw.truth, sw.ba, {}, sw.world, quad), quad_cost, 1e-9 * quad_cost);
  EXPECT_NEAR(total_cost(sw.truth, sw.ba, {}, sw.world, hub), hub_cost, 1e-9 * hub_cost);
}

TEST(TwoStep, NoOutliersKeepsEverything) {
  SyntheticSpec spec;
  spec.point_sigma = 0.005;
  auto sw = make_synthetic_window(spec);
  WindowState w = sw.truth;
  std::vector<BAFactor> ba = sw.ba;
  const TwoStepReport r = two_step_optimize(w, ba, sw.preint, sw.world, EstimatorConfig{});
  EXPECT_TRUE(r.removed.empty());
  EXPECT_EQ(ba.size(), sw.ba.size());
}

TEST(TwoStep, GrossOutlierRemoved) {
  SyntheticSpec spec;
  spec.point_sigma = 0.0;
  auto sw = make_synthetic_window(spec);
  const std::size_t bad = 17;
  BAFactor& f = sw.ba[bad];
  const double sigma_w = std::sqrt(f.variance());
  const PlaneObservation o = f.association.observations()[2];
  // Scale a displacement along the plane normal until the factor sits at
  // ten whitened sigmas.
  const Vec3 n = ba_jacobians(f, sw.truth).plane.n;
  const Pose sensor = sw.truth.state_of(o.keyframe_id).pose() * sw.truth.extrinsic;
  double delta = 0.1;
  for (int it = 0; it < 20; ++it) {
    f.association.displace(2, o.point + sensor.q.conjugate() * (delta * n));
    delta *= std::sqrt(10.0 * sigma_w / ba_residual(f, sw.truth));
  }
  f.association.displace(2, o.point + sensor.q.conjugate() * (delta * n));
  ASSERT_NEAR(ba_residual(f, sw.truth) / sigma_w, 10.0, 0.01);

  WindowState w = sw.truth;
  std::vector<BAFactor> ba = sw.ba;
  const TwoStepReport r = two_step_optimize(w, ba, sw.preint, sw.world, EstimatorConfig{});
  ASSERT_EQ(r.removed.size(), 1u);
  EXPECT_EQ(r.removed[0], bad);
  EXPECT_EQ(ba.size(), sw.ba.size() - 1);
  for (const BAFactor& kept : ba) EXPECT_NE(kept.tag, sw.ba[bad].tag);
}

TEST(InitialPrior, CoversVelocityBiasesAndExtrinsic) {
  WindowNode node{3, ImuState{}};
  node.state.v = Vec3(1, 2, 3);
  PriorSigmas s;
  const Prior p = make_initial_prior(node, Pose{}, s);
  ASSERT_EQ(p.dim(), 21);
  EXPECT_TRUE(p.covers_extrinsic);
  EXPECT_DOUBLE_EQ(p.information(es::kP, es::kP), 0.0);
  EXPECT_DOUBLE_EQ(p.information(es::kR, es::kR), 0.0);
  EXPECT_DOUBLE_EQ(p.information(es::kV, es::kV), 1.0 / (0.05 * 0.05));
  EXPECT_DOUBLE_EQ(p.information(es::kBg + 2, es::kBg + 2), 1.0 / (5e-3 * 5e-3));
  EXPECT_DOUBLE_EQ(p.information(es::kBa + 1, es::kBa + 1), 1.0 / (0.1 * 0.1));
  EXPECT_DOUBLE_EQ(p.information(16, 16), 1.0 / (0.1 * 0.1));
  EXPECT_DOUBLE_EQ(p.information(20, 20), 1.0 / (0.0873 * 0.0873));

  WindowState w;
  w.nodes.push_back(node);
  EXPECT_DOUBLE_EQ(p.cost(w), 0.0);
  w.nodes[0].state.v.y() += 0.1;  // two sigma
  EXPECT_NEAR(p.cost(w), 0.5 * 4.0, 1e-12);

  s.extrinsic_rot = 0.0;
  const Prior q = make_initial_prior(node, Pose{}, s);
  EXPECT_EQ(q.dim(), 15);
  EXPECT_FALSE(q.covers_extrinsic);
}

TEST(InitialPrior, SqrtFormReproducesQuadratic) {
  Prior p;
  p.node_ids = {0};
  p.lin_states = {ImuState{}};
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  Eigen::MatrixXd a(15, 15);
  for (int i = 0; i < 15; ++i)
    for (int j = 0; j < 15; ++j) a(i, j) = g(rng);
  p.information = a.transpose() * a;
  p.gradient = Eigen::VectorXd::NullaryExpr(15, [&] { return g(rng); });
  Eigen::VectorXd r;
  Eigen::MatrixXd h;
  p.sqrt_form(&r, &h);
  EXPECT_LT((h.transpose() * h - p.information).norm(), 1e-9 * p.information.norm());
  // 1/2 |r - H dx|^2 differs from the prior cost by a constant.
  const Eigen::VectorXd x1 = Eigen::VectorXd::NullaryExpr(15, [&] { return g(rng); });
  const Eigen::VectorXd x2 = Eigen::VectorXd::NullaryExpr(15, [&] { return g(rng); });
  const auto quad = [&](const Eigen::VectorXd& x) { return p.gradient.dot(x) + 0.5 * x.dot(p.information * x); };
  const auto sq = [&](const Eigen::VectorXd& x) { return 0.5 * (r - h * x).squaredNorm(); };
  EXPECT_NEAR(quad(x1) - quad(x2), sq(x1) - sq(x2), 1e-8 * std::abs(quad(x1)));
}

TEST(Marginalize, SinglePreintMatchesDenseSchurComplement) {
  SyntheticSpec spec;
  spec.nodes = 2;
  spec.ba_factors = 0;
  auto sw = make_synthetic_window(spec);
  WindowState w = sw.truth;
  w.prior = make_initial_prior(w.nodes[0], w.extrinsic, PriorSigmas{});
  std::mt19937_64 rng(10);
  perturb_nodes(w, rng, 0.01, 0.005, false);
  w.extrinsic.p += Vec3(0.01, -0.02, 0.005);
  EstimatorConfig cfg;

  // Dense oracle on [node0 | node1 | extrinsic]: preintegration, the
  // initial prior on node 0 and the extrinsic, and the gauge anchor.
  const PreintFactor& f = sw.preint[0];
  Mat15 ji, jj;
  preintegration_jacobians(w.nodes[0].state, w.nodes[1].state, f.delta, sw.world, &ji, &jj);
  const Vec15 r = preintegration_residual(w.nodes[0].state, w.nodes[1].state, f.delta, sw.world);
  const Mat15 cov = 0.5 * (f.delta.cov + f.delta.cov.transpose()) + 1e-18 * Mat15::Identity();
  const Mat15 info = cov.inverse();
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(15, 36);
  jac.leftCols(15) = ji;
  jac.middleCols(15, 15) = jj;
  Eigen::MatrixXd h = jac.transpose() * info * jac;
  Eigen::VectorXd g = jac.transpose() * info * r;
  const Prior& p = *w.prior;
  const Eigen::VectorXd pd = p.delta(w);
  std::vector<int> rows;
  for (int i = 0; i < 15; ++i) rows.push_back(i);
  for (int i = 0; i < 6; ++i) rows.push_back(30 + i);
  for (int i = 0; i < 21; ++i) {
    g(rows[i]) += p.gradient(i) + p.information.row(i).dot(pd);
    for (int j = 0; j < 21; ++j) h(rows[i], rows[j]) += p.information(i, j);
  }
  for (int k = 0; k < 6; ++k) h(k, k) += cfg.anchor_information;
  for (int k = 0; k < 15; ++k) h(k, k) += cfg.marginalization_regularizer;
  const Eigen::MatrixXd hmm_inv = h.topLeftCorner(15, 15).inverse();
  const Eigen::MatrixXd expect_h =
      h.bottomRightCorner(21, 21) - h.bottomLeftCorner(21, 15) * hmm_inv * h.topRightCorner(15, 21);
  const Eigen::VectorXd expect_g = g.tail(21) - h.bottomLeftCorner(21, 15) * hmm_inv * g.head(15);

  std::vector<BAFactor> ba;
  std::vector<PreintFactor> preint = sw.preint;
  const MarginalizationReport rep = marginalize_oldest(w, ba, preint, sw.world, cfg);
  EXPECT_EQ(rep.removed_node_id, 0);
  EXPECT_EQ(rep.preint_factors_marginalized, 1);
  EXPECT_TRUE(preint.empty());
  ASSERT_EQ(w.nodes.size(), 1u);
  ASSERT_TRUE(w.prior.has_value());
  ASSERT_EQ(w.prior->dim(), 21);
  EXPECT_EQ(w.prior->node_ids, std::vector<int>{1});
  const double scale = expect_h.cwiseAbs().maxCoeff();
  EXPECT_LT((w.prior->information - expect_h).cwiseAbs().maxCoeff(), 1e-9 * scale);
  EXPECT_LT((w.prior->gradient - expect_g).cwiseAbs().maxCoeff(), 1e-9 * std::max(1.0, expect_g.cwiseAbs().maxCoeff()));
  // Node 1 inherits the anchor: its pose is now well determined.
  const Eigen::MatrixXd pose_info = w.prior->information.topLeftCorner(6, 6);
  EXPECT_GT(pose_info.diagonal().minCoeff(), 1e3);
}

TEST(Marginalize, UntouchedOldestNodeIsDropped) {
  auto sw = make_synthetic_window({});
  WindowState w = sw.truth;
  std::vector<BAFactor> ba;
  for (const BAFactor& f : sw.ba) {
    bool touches = false;
    for (const auto& o : f.association.observations()) touches |= o.keyframe_id == 0;
    if (!touches) ba.push_back(f);
  }
  std::vector<PreintFactor> preint(sw.preint.begin() + 1, sw.preint.end());
  const std::size_t n_ba = ba.size();
  const MarginalizationReport rep = marginalize_oldest(w, ba, preint, sw.world, EstimatorConfig{});
  EXPECT_EQ(rep.removed_node_id, 0);
  EXPECT_FALSE(w.prior.has_value());
  EXPECT_EQ(w.nodes.front().id, 1);
  EXPECT_EQ(ba.size(), n_ba);
}

TEST(Marginalize, RemovesFactorsTouchingOldest) {
  auto sw = make_synthetic_window({});
  WindowState w = sw.truth;
  std::vector<BAFactor> ba = sw.ba;
  std::vector<PreintFactor> preint = sw.preint;
  marginalize_oldest(w, ba, preint, sw.world, EstimatorConfig{});
  for (const BAFactor& f : ba)
    for (const auto& o : f.association.observations()) EXPECT_NE(o.keyframe_id, 0);
  for (const PreintFactor& f : preint) EXPECT_NE(f.from_id, 0);
  EXPECT_TRUE(w.anchored);
}

TEST(Marginalize, CostContinuity) {
  SyntheticSpec spec;
  spec.nodes = 11;
  spec.point_sigma = 0.01;
  spec.ba_factors = 120;
  auto sw = make_synthetic_window(spec);
  WindowState w = sw.truth;
  std::mt19937_64 rng(11);
  perturb_nodes(w, rng, 0.01, 0.003, true);
  EstimatorConfig cfg;
  cfg.rel_cost_tol = 1e-14;
  solve(w, sw.ba, sw.preint, sw.world, cfg);
  std::vector<BAFactor> ba = sw.ba;
  std::vector<PreintFactor> preint = sw.preint;
  const double before = total_cost(w, ba, preint, sw.world, cfg);
  marginalize_oldest(w, ba, preint, sw.world, cfg);
  const double after = total_cost(w, ba, preint, sw.world, cfg);
  EXPECT_NEAR(after, before, 1e-6 * std::max(1.0, before));
}

TEST(Marginalize, AgreesWithFullSolveInLinearRegime) {
  // Plane-point factors on the oldest node are kept out: their Gauss-Newton
  // information is not the curvature of a sum-of-squares residual, so
  // folding them into a prior is not exact even near the optimum.
  SyntheticSpec spec;
  spec.nodes = 8;
  spec.point_sigma = 0.01;
  spec.ba_factors = 100;
  auto sw = make_synthetic_window(spec);
  std::vector<BAFactor> kept;
  for (const BAFactor& f : sw.ba) {
    bool touches = false;
    for (const auto& o : f.association.observations()) touches |= o.keyframe_id == 0;
    if (!touches) kept.push_back(f);
  }
  ASSERT_GT(kept.size(), 10u);
  WindowState init = sw.truth;
  init.prior = make_initial_prior(init.nodes[0], init.extrinsic, PriorSigmas{1e-3, 1e-4, 1e-3, 1e-3, 1e-3});
  std::mt19937_64 rng(12);
  perturb_nodes(init, rng, 0.002, 2e-4, true);
  EstimatorConfig cfg;
  cfg.rel_cost_tol = 1e-14;
  cfg.max_iterations = 100;

  WindowState full = init;
  solve(full, kept, sw.preint, sw.world, cfg);

  WindowState marg = init;
  std::vector<BAFactor> ba = kept;
  std::vector<PreintFactor> preint = sw.preint;
  marginalize_oldest(marg, ba, preint, sw.world, cfg);
  solve(marg, ba, preint, sw.world, cfg);

  for (std::size_t s = 1; s < full.nodes.size(); ++s) {
    const ImuState& a = full.nodes[s].state;
    const ImuState& b = marg.nodes[s - 1].state;
    EXPECT_LT((a.p - b.p).norm(), 1e-4) << "node " << s;
    EXPECT_LT(rot::angle(a.q.conjugate() * b.q), 1e-4) << "node " << s;
  }
}

TEST(PoseCovariance, SymmetricPositiveDefinite) {
  auto sw = make_synthetic_window({});
  WindowState w = sw.truth;
  w.prior = make_initial_prior(w.nodes[0], w.extrinsic, PriorSigmas{});
  const auto c = pose_covariance(w, sw.ba, sw.preint, sw.world, EstimatorConfig{}, 3);
  EXPECT_LT((c - c.transpose()).norm(), 1e-9 * c.norm());
  using Mat6 = Eigen::Matrix<double, 6, 6>;
  EXPECT_GT(Eigen::SelfAdjointEigenSolver<Mat6>(c).eigenvalues().minCoeff(), 0.0);
  // The held first pose has no covariance.
  EXPECT_EQ(pose_covariance(w, sw.ba, sw.preint, sw.world, EstimatorConfig{}, 0).norm(), 0.0);
}

TEST(Repropagation, TriggeredByBiasDrift) {
  SyntheticSpec spec;
  spec.nodes = 3;
  spec.ba_factors = 0;
  auto sw = make_synthetic_window(spec);
  EstimatorConfig cfg;
  std::vector<PreintFactor> preint = sw.preint;
  EXPECT_EQ(repropagate_preintegration(sw.truth, preint, sw.world, cfg), 0);
  WindowState w = sw.truth;
  w.nodes[1].state.bg.x() += 2.0 * cfg.repropagate_bg;
  EXPECT_EQ(repropagate_preintegration(w, preint, sw.world, cfg), 1);
  EXPECT_EQ(preint[1].delta.lin_bg, w.nodes[1].state.bg);
  const PreintegrationDelta direct = preintegrate(preint[1].samples, w.nodes[1].state.bg, w.nodes[1].state.ba, sw.world);
  EXPECT_EQ(preint[1].delta.dp, direct.dp);
}

TEST(ExtrinsicCovariance, PriorAloneThenDataShrinksIt) {
  SyntheticSpec spec;
  spec.ba_factors = 0;
  auto sw = make_synthetic_window(spec);
  WindowState w = sw.truth;
  EstimatorConfig cfg;
  EXPECT_TRUE(extrinsic_covariance(w, sw.ba, sw.preint, sw.world, cfg).isZero());

  const PriorSigmas s;
  w.prior = make_initial_prior(w.nodes[0], w.extrinsic, s);
  cfg.estimate_extrinsic = false;  // reported as if free regardless
  const Eigen::Matrix<double, 6, 6> alone = extrinsic_covariance(w, sw.ba, sw.preint, sw.world, cfg);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(alone(i, i), s.extrinsic_p * s.extrinsic_p, 1e-9);
    EXPECT_NEAR(alone(3 + i, 3 + i), s.extrinsic_rot * s.extrinsic_rot, 1e-9);
  }

  // Noisy points: the squared-distance residual has a zero Jacobian at an
  // exact fit, so noise-free factors at the truth carry no information.
  spec.ba_factors = 60;
  spec.point_sigma = 0.01;
  auto rich = make_synthetic_window(spec);
  const Eigen::Matrix<double, 6, 6> seen = extrinsic_covariance(w, rich.ba, rich.preint, rich.world, cfg);
  // Rotation is pinned hard; the lever arm only partly over a 2.5 s window.
  for (int i = 0; i < 3; ++i) EXPECT_LT(seen(i, i), 0.9 * alone(i, i)) << i;
  for (int i = 3; i < 6; ++i) EXPECT_LT(seen(i, i), 0.1 * alone(i, i)) << i;
  EXPECT_LT((seen - seen.transpose()).norm(), 1e-12 * seen.norm());
}
