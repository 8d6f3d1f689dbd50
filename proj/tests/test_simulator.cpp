#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <unistd.h>
#include <random>
#include <set>
#include <sstream>

#include "planelio/dataset.hpp"
#include "planelio/error.hpp"
#include "planelio/simulator.hpp"

using namespace planelio;
namespace fs = std::filesystem;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::kInvalidConfig;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("planelio_sim_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// World-frame position of a generated point from the exact kinematics.
Vec3 project_truth(const sim::TrajectorySpec& traj, const sim::SensorNoiseSpec& noise, const LidarFrame& f,
                   const LidarPoint& p) {
  const sim::Kinematics k = sim::evaluate(traj, f.t + noise.t_d + p.t_offset);
  return (Pose{k.p, k.q} * noise.extrinsic) * p.xyz;
}

}  // namespace

TEST(World, PresetsArePlanarWithUnitNormals) {
  for (const char* name : {"box", "corridor", "corner", "floor"}) {
    const sim::WorldModel w = sim::make_world(name);
    ASSERT_FALSE(w.planes.empty()) << name;
    std::set<int> ids;
    for (const sim::PolygonPlane& p : w.planes) {
      EXPECT_NEAR(p.n.norm(), 1.0, 1e-12);
      for (const Vec3& v : p.vertices) EXPECT_LT(std::abs(p.n.dot(v) + p.d), 1e-9);
      ids.insert(p.id);
    }
    EXPECT_EQ(ids.size(), w.planes.size()) << "ids must be distinct in " << name;
  }
  EXPECT_EQ(sim::make_world("corridor").planes.size(), 2u);
  EXPECT_EQ(kind_of([] { sim::make_world("moon"); }), ErrorKind::kUnknownPreset);
}

TEST(World, MakePolygonValidates) {
  const sim::PolygonPlane p = sim::make_polygon(4, {{0, 0, 2}, {3, 0, 2}, {3, 3, 2}});
  EXPECT_NEAR(std::abs(p.n.z()), 1.0, 1e-15);
  EXPECT_NEAR(p.n.dot(Vec3(1, 1, 2)) + p.d, 0.0, 1e-15);
  EXPECT_EQ(kind_of([] { sim::make_polygon(0, {{0, 0, 0}, {1, 0, 0}}); }), ErrorKind::kDegenerateGeometry);
  EXPECT_EQ(kind_of([] { sim::make_polygon(0, {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0.1}}); }),
            ErrorKind::kDegenerateGeometry);
  EXPECT_EQ(kind_of([] { sim::make_polygon(0, {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}); }), ErrorKind::kDegenerateGeometry);
}

TEST(CastRay, NearestInsidePolygon) {
  sim::WorldModel w;
  w.planes.push_back(sim::make_polygon(1, {{5, -1, -1}, {5, 1, -1}, {5, 1, 1}, {5, -1, 1}}));
  w.planes.push_back(sim::make_polygon(2, {{9, -9, -9}, {9, 9, -9}, {9, 9, 9}, {9, -9, 9}}));
  int id = -1;
  EXPECT_NEAR(sim::cast_ray(w, Vec3::Zero(), Vec3::UnitX(), &id), 5.0, 1e-12);
  EXPECT_EQ(id, 1);
  // Misses the small square, hits the big one.
  EXPECT_NEAR(sim::cast_ray(w, Vec3(0, 3, 0), Vec3::UnitX(), &id), 9.0, 1e-12);
  EXPECT_EQ(id, 2);
  EXPECT_LT(sim::cast_ray(w, Vec3::Zero(), -Vec3::UnitX(), &id), 0.0);
  EXPECT_LT(sim::cast_ray(w, Vec3::Zero(), Vec3::UnitY(), &id), 0.0);
}

TEST(ScanPattern, InsideConeAndNonRepeating) {
  const double half = 35.0 * M_PI / 180.0;
  std::set<std::pair<long, long>> seen;
  for (std::uint64_t i = 0; i < 20000; ++i) {
    const Vec3 d = sim::scan_direction(i, 70.0);
    EXPECT_NEAR(d.norm(), 1.0, 1e-12);
    EXPECT_LE(std::acos(std::clamp(d.x(), -1.0, 1.0)), half + 1e-12);
    seen.insert({std::lround(d.y() * 1e9), std::lround(d.z() * 1e9)});
  }
  EXPECT_EQ(seen.size(), 20000u);
}

TEST(Trajectory, PresetsAndValidation) {
  for (const char* name : {"stationary", "circle", "figure_eight", "straight", "rich"}) {
    const sim::TrajectorySpec s = sim::make_trajectory(name, 10.0);
    EXPECT_EQ(s.duration, 10.0);
    EXPECT_EQ(s.imu_rate, 200.0);
    EXPECT_EQ(s.lidar_rate, 10.0);
  }
  EXPECT_EQ(kind_of([] { sim::make_trajectory("spiral", 10.0); }), ErrorKind::kUnknownPreset);
  EXPECT_EQ(kind_of([] { sim::make_trajectory("circle", 0.0); }), ErrorKind::kNonPositiveInput);
  sim::TrajectorySpec bad = sim::make_trajectory("circle", 5.0);
  bad.imu_rate = 0.0;
  EXPECT_EQ(kind_of([&] { sim::generate_imu(bad, {}, WorldConfig{}, 1); }), ErrorKind::kNonPositiveInput);
}

TEST(Trajectory, KinematicsAreDerivativesOfEachOther) {
  const double h = 1e-5;
  for (const char* name : {"circle", "figure_eight", "rich"}) {
    const sim::TrajectorySpec s = sim::make_trajectory(name, 60.0);
    for (double t : {0.5, 2.5, 4.0, 11.3, 37.9}) {
      const sim::Kinematics k = sim::evaluate(s, t);
      const sim::Kinematics kp = sim::evaluate(s, t + h), km = sim::evaluate(s, t - h);
      EXPECT_LT((k.v - (kp.p - km.p) / (2 * h)).norm(), 1e-6) << name << " t=" << t;
      EXPECT_LT((k.a - (kp.v - km.v) / (2 * h)).norm(), 1e-6) << name << " t=" << t;
      const Vec3 omega = rot::log_map(km.q.conjugate() * kp.q) / (2 * h);
      EXPECT_LT((k.omega_b - omega).norm(), 1e-6) << name << " t=" << t;
    }
  }
}

TEST(GenerateImu, StationaryIsStatics) {
  const sim::TrajectorySpec s = sim::make_trajectory("stationary", 3.0);
  WorldConfig w;
  const sim::ImuData d = sim::generate_imu(s, sim::SensorNoiseSpec::noise_free(), w, 3);
  ASSERT_EQ(d.samples.size(), 601u);
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    EXPECT_LT(d.samples[i].gyro.norm(), 1e-15);
    EXPECT_LT((d.samples[i].accel - d.truth[i].q.conjugate() * (-w.gravity)).norm(), 1e-12);
  }
}

TEST(GenerateImu, BiasesAdded) {
  const sim::TrajectorySpec s = sim::make_trajectory("circle", 5.0);
  sim::SensorNoiseSpec clean = sim::SensorNoiseSpec::noise_free();
  sim::SensorNoiseSpec biased = clean;
  biased.gyro_bias = Vec3(1e-3, 2e-3, -3e-3);
  biased.accel_bias = Vec3(0.1, -0.2, 0.05);
  const auto a = sim::generate_imu(s, clean, WorldConfig{}, 1);
  const auto b = sim::generate_imu(s, biased, WorldConfig{}, 1);
  for (std::size_t i = 0; i < a.samples.size(); i += 97) {
    EXPECT_LT((b.samples[i].gyro - a.samples[i].gyro - biased.gyro_bias).norm(), 1e-15);
    EXPECT_LT((b.samples[i].accel - a.samples[i].accel - biased.accel_bias).norm(), 1e-13);
    EXPECT_EQ(b.truth[i].bg, biased.gyro_bias);
  }
}

// Fourth-order Runge-Kutta over pairs of sample intervals, using the middle
// sample as the half step. Independent of the production mechanization.
struct Rk4State {
  Quat q;
  Vec3 v, p;
};

struct Rk4Rate {
  Eigen::Vector4d dq;
  Vec3 dv, dp;
};

Rk4State rk4_integrate(const sim::ImuData& d, std::size_t k0, std::size_t k1, const Vec3& g) {
  const Vec3 bg = d.truth[k0].bg, ba = d.truth[k0].ba;
  const auto rate = [&](const Rk4State& s, const ImuSample& m) {
    const Vec3 w = m.gyro - bg;
    const Quat qw = s.q * Quat(0.0, w.x(), w.y(), w.z());
    return Rk4Rate{0.5 * qw.coeffs(), s.q.normalized() * (m.accel - ba) + g, s.v};
  };
  const auto advance = [](const Rk4State& s, const Rk4Rate& r, double h) {
    Rk4State out = s;
    out.q.coeffs() += h * r.dq;
    out.v += h * r.dv;
    out.p += h * r.dp;
    return out;
  };
  Rk4State x{d.truth[k0].q, d.truth[k0].v, d.truth[k0].p};
  for (std::size_t k = k0; k + 2 <= k1; k += 2) {
    const double h = d.samples[k + 2].t - d.samples[k].t;
    const Rk4Rate r1 = rate(x, d.samples[k]);
    const Rk4Rate r2 = rate(advance(x, r1, 0.5 * h), d.samples[k + 1]);
    const Rk4Rate r3 = rate(advance(x, r2, 0.5 * h), d.samples[k + 1]);
    const Rk4Rate r4 = rate(advance(x, r3, h), d.samples[k + 2]);
    const Rk4Rate sum{r1.dq + 2.0 * r2.dq + 2.0 * r3.dq + r4.dq, r1.dv + 2.0 * r2.dv + 2.0 * r3.dv + r4.dv,
                      r1.dp + 2.0 * r2.dp + 2.0 * r3.dp + r4.dp};
    x = advance(x, sum, h / 6.0);
    x.q.normalize();
  }
  return x;
}

TEST(GenerateImu, DoubleIntegrationConsistentOverSixtySeconds) {
  WorldConfig w;
  for (const char* name : {"circle", "figure_eight", "straight", "rich"}) {
    const sim::TrajectorySpec s = sim::make_trajectory(name, 60.0);
    const auto d = sim::generate_imu(s, sim::SensorNoiseSpec::noise_free(), w, 1);
    ASSERT_EQ(d.samples.size(), 12001u);
    const Rk4State x = rk4_integrate(d, 0, d.samples.size() - 1, w.gravity);
    EXPECT_LT((x.p - d.truth.back().p).norm(), 1e-3) << name;
    EXPECT_LT(rot::angle(x.q.conjugate() * d.truth.back().q), 1e-6) << name;
  }
}

TEST(GenerateImu, MechanizationTracksCircleLap) {
  // The production trapezoidal scheme over one 20 s lap after the ramp.
  const sim::TrajectorySpec s = sim::make_trajectory("circle", 40.0);
  WorldConfig w;
  const auto d = sim::generate_imu(s, sim::SensorNoiseSpec::noise_free(), w, 1);
  const auto k0 = static_cast<std::size_t>((s.stationary_prefix + s.ramp) * s.imu_rate);
  const auto k1 = k0 + static_cast<std::size_t>(s.period * s.imu_rate);
  ImuState x = d.truth[k0];
  for (std::size_t i = k0 + 1; i <= k1; ++i) x = mechanize(x, d.samples[i - 1], d.samples[i], w);
  EXPECT_LT((x.p - d.truth[k1].p).norm(), 1e-3);
  EXPECT_LT((d.truth[k1].p - d.truth[k0].p).norm(), 1e-9);  // the lap closes
}

TEST(GenerateImu, SeedDeterministic) {
  const sim::TrajectorySpec s = sim::make_trajectory("circle", 4.0);
  const sim::SensorNoiseSpec n;
  const auto a = sim::generate_imu(s, n, WorldConfig{}, 42);
  const auto b = sim::generate_imu(s, n, WorldConfig{}, 42);
  const auto c = sim::generate_imu(s, n, WorldConfig{}, 43);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples[i].gyro, b.samples[i].gyro);
    EXPECT_EQ(a.samples[i].accel, b.samples[i].accel);
    differs |= a.samples[i].gyro != c.samples[i].gyro;
  }
  EXPECT_TRUE(differs);
}

TEST(GenerateLidar, ExactIncidenceOnFloor) {
  sim::TrajectorySpec s = sim::make_trajectory("stationary", 1.0);
  sim::SensorNoiseSpec n = sim::SensorNoiseSpec::noise_free();
  n.extrinsic = Pose{Vec3::Zero(), rot::from_rpy(0.0, M_PI / 2.0, 0.0)};  // cone axis down
  const auto frames = sim::generate_lidar(s, sim::make_world("floor"), n, 5);
  ASSERT_EQ(frames.size(), 10u);
  std::size_t count = 0;
  for (const LidarFrame& f : frames) {
    ASSERT_EQ(f.labels.size(), f.points.size());
    for (std::size_t i = 0; i < f.points.size(); ++i) {
      EXPECT_LT(std::abs(project_truth(s, n, f, f.points[i]).z()), 1e-9);
      EXPECT_GE(f.points[i].t_offset, 0.0);
      EXPECT_LT(f.points[i].t_offset, 0.1);
      ++count;
    }
  }
  EXPECT_EQ(count, 10u * static_cast<std::size_t>(n.points_per_frame));
}

TEST(GenerateLidar, RangeNoiseStatisticWithObliquity) {
  sim::TrajectorySpec s = sim::make_trajectory("stationary", 1.0);
  sim::SensorNoiseSpec n = sim::SensorNoiseSpec::noise_free();
  n.lidar_range_sigma = 0.02;
  n.extrinsic = Pose{Vec3::Zero(), rot::from_rpy(0.0, 1.2, 0.0)};  // oblique view of the floor
  const auto frames = sim::generate_lidar(s, sim::make_world("floor"), n, 9);
  double sum_d2 = 0.0, sum_c2 = 0.0;
  std::size_t count = 0;
  for (const LidarFrame& f : frames) {
    const sim::Kinematics k = sim::evaluate(s, f.t);
    const Pose lidar = Pose{k.p, k.q} * n.extrinsic;
    for (const LidarPoint& p : f.points) {
      const double d = project_truth(s, n, f, p).z();
      const double c = (lidar.q * p.xyz.normalized()).z();  // cosine of incidence
      sum_d2 += d * d;
      sum_c2 += c * c;
      ++count;
    }
  }
  ASSERT_GE(count, 10000u);
  const double rms = std::sqrt(sum_d2 / count);
  const double c = std::sqrt(sum_c2 / count);
  EXPECT_GE(rms, 0.019 * c);
  EXPECT_LE(rms, 0.021 * c);
}

TEST(GenerateLidar, PointsWithinThreeSigmaSlab) {
  const sim::TrajectorySpec s = sim::make_trajectory("rich", 6.0);
  sim::SensorNoiseSpec n;
  const sim::WorldModel world = sim::make_world("box");
  const auto frames = sim::generate_lidar(s, world, n, 13);
  std::map<int, const sim::PolygonPlane*> by_id;
  for (const auto& p : world.planes) by_id[p.id] = &p;
  std::size_t total = 0;
  double worst = 0.0;
  for (const LidarFrame& f : frames) {
    for (std::size_t i = 0; i < f.points.size(); ++i) {
      const sim::PolygonPlane& pl = *by_id.at(f.labels[i]);
      const sim::Kinematics k = sim::evaluate(s, f.t + n.t_d + f.points[i].t_offset);
      const Pose lidar = Pose{k.p, k.q} * n.extrinsic;
      const double cos_inc = std::abs(pl.n.dot(lidar.q * f.points[i].xyz.normalized()));
      const double dist = std::abs(pl.n.dot(project_truth(s, n, f, f.points[i])) + pl.d);
      worst = std::max(worst, dist * cos_inc / n.lidar_range_sigma);
      EXPECT_LE(dist, 3.0 * n.lidar_range_sigma / cos_inc + 1e-9);
      ++total;
    }
  }
  EXPECT_GT(total, 50000u);
  EXPECT_GT(worst, 1.0);  // the noise is actually there
}

TEST(GenerateLidar, SeedDeterministicAndTimeShift) {
  const sim::TrajectorySpec s = sim::make_trajectory("circle", 2.0);
  sim::SensorNoiseSpec n;
  const auto a = sim::generate_lidar(s, sim::make_world("box"), n, 77);
  const auto b = sim::generate_lidar(s, sim::make_world("box"), n, 77);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t f = 0; f < a.size(); ++f) {
    ASSERT_EQ(a[f].points.size(), b[f].points.size());
    for (std::size_t i = 0; i < a[f].points.size(); ++i) EXPECT_EQ(a[f].points[i].xyz, b[f].points[i].xyz);
  }
  n.t_d = 0.013;
  const auto c = sim::generate_lidar(s, sim::make_world("box"), n, 77);
  EXPECT_NEAR(c[3].t, a[3].t - 0.013, 1e-15);
}

TEST(Dataset, RoundTripWithinTextPrecision) {
  const sim::TrajectorySpec s = sim::make_trajectory("circle", 3.0);
  const Dataset ds = sim::simulate("box", s, sim::SensorNoiseSpec{}, WorldConfig{}, 4);
  const fs::path dir = scratch_dir("roundtrip");
  write_dataset(ds, dir);
  EXPECT_TRUE(fs::exists(dir / "imu.csv"));
  EXPECT_TRUE(fs::exists(dir / "lidar.csv"));
  EXPECT_TRUE(fs::exists(dir / "groundtruth.tum"));
  EXPECT_TRUE(fs::exists(dir / "labels.csv"));
  const Dataset back = read_dataset(dir);
  const auto close = [](double a, double b) { return std::abs(a - b) <= 1e-8 * std::max(1.0, std::abs(a)); };
  ASSERT_EQ(back.imu.size(), ds.imu.size());
  for (std::size_t i = 0; i < ds.imu.size(); ++i) {
    EXPECT_TRUE(close(back.imu[i].t, ds.imu[i].t));
    for (int k = 0; k < 3; ++k) {
      EXPECT_TRUE(close(back.imu[i].gyro(k), ds.imu[i].gyro(k)));
      EXPECT_TRUE(close(back.imu[i].accel(k), ds.imu[i].accel(k)));
    }
  }
  ASSERT_EQ(back.frames.size(), ds.frames.size());
  for (std::size_t f = 0; f < ds.frames.size(); ++f) {
    ASSERT_EQ(back.frames[f].points.size(), ds.frames[f].points.size());
    EXPECT_EQ(back.frames[f].labels, ds.frames[f].labels);
    for (std::size_t i = 0; i < ds.frames[f].points.size(); i += 37) {
      for (int k = 0; k < 3; ++k) EXPECT_TRUE(close(back.frames[f].points[i].xyz(k), ds.frames[f].points[i].xyz(k)));
    }
  }
  ASSERT_EQ(back.truth.size(), ds.truth.size());
  for (std::size_t i = 0; i < ds.truth.size(); i += 11) {
    EXPECT_LT((back.truth[i].pose.p - ds.truth[i].pose.p).norm(), 1e-7);
    EXPECT_LT(rot::angle(back.truth[i].pose.q.conjugate() * ds.truth[i].pose.q), 1e-8);
  }
  fs::remove_all(dir);
}

TEST(Dataset, EmptyFramesGiveHeaderOnlyFiles) {
  Dataset ds;
  ds.imu = {{0.0, Vec3::Zero(), Vec3(0, 0, 9.81)}, {0.005, Vec3::Zero(), Vec3(0, 0, 9.81)}};
  const fs::path dir = scratch_dir("empty");
  write_dataset(ds, dir);
  const std::string lidar = slurp(dir / "lidar.csv");
  EXPECT_EQ(std::count(lidar.begin(), lidar.end(), '\n'), 1);
  const Dataset back = read_dataset(dir);
  EXPECT_TRUE(back.frames.empty());
  EXPECT_TRUE(back.truth.empty());
  EXPECT_EQ(back.imu.size(), 2u);
  fs::remove_all(dir);
}

TEST(Dataset, MalformedInputRejected) {
  const fs::path dir = scratch_dir("bad");
  fs::create_directories(dir);
  {
    std::ofstream(dir / "bad.tum") << "0.0 1 2 3 0 0 0 1\n0.1 1 2\n";
  }
  EXPECT_EQ(kind_of([&] { read_tum(dir / "bad.tum"); }), ErrorKind::kDatasetError);
  {
    std::ofstream(dir / "order.tum") << "0.2 1 2 3 0 0 0 1\n0.1 1 2 3 0 0 0 1\n";
  }
  EXPECT_EQ(kind_of([&] { read_tum(dir / "order.tum"); }), ErrorKind::kDatasetError);
  EXPECT_EQ(kind_of([&] { read_dataset(dir / "missing"); }), ErrorKind::kDatasetError);
  fs::remove_all(dir);
}

TEST(Simulate, CorridorPointsOnTwoPlanes) {
  const sim::TrajectorySpec s = sim::make_trajectory("straight", 4.0);
  const Dataset ds = sim::simulate("corridor", s, sim::SensorNoiseSpec::noise_free(), WorldConfig{}, 2);
  std::set<int> labels;
  for (const LidarFrame& f : ds.frames) labels.insert(f.labels.begin(), f.labels.end());
  EXPECT_EQ(labels.size(), 2u);
}
