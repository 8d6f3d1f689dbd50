#include "planelio/kernels.hpp"

namespace planelio::kernels::scalar {

void transform_points(std::span<const Vec3> src, const Mat3& r, const Vec3& t, std::span<Vec3> dst) {
  const double r00 = r(0, 0), r01 = r(0, 1), r02 = r(0, 2);
  const double r10 = r(1, 0), r11 = r(1, 1), r12 = r(1, 2);
  const double r20 = r(2, 0), r21 = r(2, 1), r22 = r(2, 2);
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double x = src[i].x(), y = src[i].y(), z = src[i].z();
    dst[i] = Vec3(((r00 * x + r01 * y) + r02 * z) + t.x(),
                  ((r10 * x + r11 * y) + r12 * z) + t.y(),
                  ((r20 * x + r21 * y) + r22 * z) + t.z());
  }
}

double plane_sq_dist_sum(std::span<const Vec3> pts, const Vec3& n, double d) {
  double sum = 0.0;
  for (const Vec3& p : pts) {
    const double e = ((n.x() * p.x() + n.y() * p.y()) + n.z() * p.z()) + d;
    sum += e * e;
  }
  return sum;
}

void squared_distances(std::span<const Vec3> pts, const Vec3& q, std::span<double> out) {
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double dx = pts[i].x() - q.x();
    const double dy = pts[i].y() - q.y();
    const double dz = pts[i].z() - q.z();
    out[i] = (dx * dx + dy * dy) + dz * dz;
  }
}

}  // namespace planelio::kernels::scalar
