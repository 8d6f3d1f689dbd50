#include "planelio/dataset.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "planelio/error.hpp"

namespace planelio {
namespace fs = std::filesystem;
namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIoFailure, "cannot write " + path.string());
  out.precision(9);
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kDatasetError, "cannot read " + path.string());
  return in;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw Error(ErrorKind::kIoFailure, "write failed for " + path.string());
}

[[noreturn]] void bad_row(const fs::path& path, std::size_t line, const std::string& what) {
  throw Error(ErrorKind::kDatasetError, path.filename().string() + ":" + std::to_string(line) + ": " + what);
}

// Splits on any of `seps`, skipping empty fields, and parses doubles.
template <std::size_t N>
bool parse_fields(std::string_view line, std::string_view seps, std::array<double, N>& out) {
  std::size_t count = 0;
  std::size_t pos = 0;
  while (pos < line.size()) {
    const std::size_t end = std::min(line.find_first_of(seps, pos), line.size());
    std::string_view tok = line.substr(pos, end - pos);
    while (!tok.empty() && (tok.front() == ' ' || tok.front() == '\t')) tok.remove_prefix(1);
    while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\t' || tok.back() == '\r')) tok.remove_suffix(1);
    if (!tok.empty()) {
      if (count == N) return false;
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out[count]);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) return false;
      ++count;
    }
    pos = end + 1;
  }
  return count == N;
}

bool blank(std::string_view line) { return line.find_first_not_of(" \t\r") == std::string_view::npos; }

}  // namespace

void write_imu_csv(const fs::path& path, const std::vector<ImuSample>& samples) {
  std::ofstream out = open_out(path);
  out << "t,gx,gy,gz,ax,ay,az\n";
  for (const ImuSample& s : samples) {
    out << s.t << ',' << s.gyro.x() << ',' << s.gyro.y() << ',' << s.gyro.z() << ',' << s.accel.x() << ','
        << s.accel.y() << ',' << s.accel.z() << '\n';
  }
  finish(out, path);
}

std::vector<ImuSample> read_imu_csv(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::string line;
  std::vector<ImuSample> samples;
  std::getline(in, line);
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (blank(line)) continue;
    std::array<double, 7> v{};
    if (!parse_fields(line, ",", v)) bad_row(path, n, "expected 7 numeric fields");
    if (!samples.empty() && !(v[0] > samples.back().t)) bad_row(path, n, "timestamps must increase");
    samples.push_back({v[0], Vec3(v[1], v[2], v[3]), Vec3(v[4], v[5], v[6])});
  }
  return samples;
}

void write_lidar_csv(const fs::path& path, const std::vector<LidarFrame>& frames) {
  std::ofstream out = open_out(path);
  out << "frame_id,frame_t,point_t_offset,x,y,z\n";
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (const LidarPoint& p : frames[f].points) {
      out << f << ',' << frames[f].t << ',' << p.t_offset << ',' << p.xyz.x() << ',' << p.xyz.y() << ','
          << p.xyz.z() << '\n';
    }
  }
  finish(out, path);
}

std::vector<LidarFrame> read_lidar_csv(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::string line;
  std::vector<LidarFrame> frames;
  double current_id = -1.0;
  std::getline(in, line);
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (blank(line)) continue;
    std::array<double, 6> v{};
    if (!parse_fields(line, ",", v)) bad_row(path, n, "expected 6 numeric fields");
    if (frames.empty() || v[0] != current_id) {
      if (!frames.empty() && !(v[1] > frames.back().t)) bad_row(path, n, "frame times must increase");
      current_id = v[0];
      frames.push_back({v[1], {}, {}});
    } else if (v[1] != frames.back().t) {
      bad_row(path, n, "frame_t changes within a frame");
    }
    frames.back().points.push_back({Vec3(v[3], v[4], v[5]), v[2]});
  }
  return frames;
}

void write_labels_csv(const fs::path& path, const std::vector<LidarFrame>& frames) {
  std::ofstream out = open_out(path);
  out << "plane_id\n";
  for (const LidarFrame& f : frames) {
    for (std::size_t i = 0; i < f.points.size(); ++i) out << (i < f.labels.size() ? f.labels[i] : -1) << '\n';
  }
  finish(out, path);
}

void read_labels_csv(const fs::path& path, std::vector<LidarFrame>& frames) {
  std::ifstream in = open_in(path);
  std::string line;
  std::getline(in, line);
  std::vector<int> labels;
  while (std::getline(in, line)) {
    if (blank(line)) continue;
    labels.push_back(std::stoi(line));
  }
  std::size_t k = 0;
  for (LidarFrame& f : frames) k += f.points.size();
  if (k != labels.size()) throw Error(ErrorKind::kDatasetError, "labels.csv row count does not match lidar.csv");
  k = 0;
  for (LidarFrame& f : frames) {
    f.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(k),
                    labels.begin() + static_cast<std::ptrdiff_t>(k + f.points.size()));
    k += f.points.size();
  }
}

void write_tum(const fs::path& path, const TrajectoryRecord& trajectory) {
  std::ofstream out = open_out(path);
  for (const TimedPose& r : trajectory) {
    const Quat q = r.pose.q.normalized();
    out << r.t << ' ' << r.pose.p.x() << ' ' << r.pose.p.y() << ' ' << r.pose.p.z() << ' ' << q.x() << ' '
        << q.y() << ' ' << q.z() << ' ' << q.w() << '\n';
  }
  finish(out, path);
}

TrajectoryRecord read_tum(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::string line;
  TrajectoryRecord traj;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (blank(line) || line.front() == '#') continue;
    std::array<double, 8> v{};
    if (!parse_fields(line, " \t", v)) bad_row(path, n, "expected 8 numeric fields");
    if (!traj.empty() && !(v[0] > traj.back().t)) bad_row(path, n, "timestamps must increase");
    const Quat q(v[7], v[4], v[5], v[6]);
    if (q.norm() < 1e-6) bad_row(path, n, "zero quaternion");
    traj.push_back({v[0], Pose{Vec3(v[1], v[2], v[3]), q.normalized()}});
  }
  return traj;
}

void write_dataset(const Dataset& dataset, const fs::path& directory) {
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) throw Error(ErrorKind::kIoFailure, "cannot create " + directory.string());
  write_imu_csv(directory / "imu.csv", dataset.imu);
  write_lidar_csv(directory / "lidar.csv", dataset.frames);
  write_tum(directory / "groundtruth.tum", dataset.truth);
  const bool labeled = std::any_of(dataset.frames.begin(), dataset.frames.end(),
                                   [](const LidarFrame& f) { return !f.labels.empty(); });
  if (labeled) write_labels_csv(directory / "labels.csv", dataset.frames);
}

Dataset read_dataset(const fs::path& directory) {
  if (!fs::is_directory(directory)) throw Error(ErrorKind::kDatasetError, "no dataset at " + directory.string());
  Dataset ds;
  ds.imu = read_imu_csv(directory / "imu.csv");
  ds.frames = read_lidar_csv(directory / "lidar.csv");
  if (fs::exists(directory / "groundtruth.tum")) ds.truth = read_tum(directory / "groundtruth.tum");
  if (fs::exists(directory / "labels.csv")) read_labels_csv(directory / "labels.csv", ds.frames);
  return ds;
}

}  // namespace planelio
