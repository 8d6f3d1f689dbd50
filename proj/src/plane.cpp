#include "planelio/plane.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

#include "planelio/error.hpp"
#include "planelio/kernels.hpp"

namespace planelio {

Plane fit_plane(std::span<const Vec3> points) {
  if (points.size() < 3) {
    throw Error(ErrorKind::kDegenerateGeometry, "plane fit needs at least three points");
  }
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());

  Mat3 scatter = Mat3::Zero();
  for (const Vec3& p : points) {
    const Vec3 c = p - centroid;
    scatter.noalias() += c * c.transpose();
  }

  Eigen::SelfAdjointEigenSolver<Mat3> es(scatter);
  const Vec3 ev = es.eigenvalues();  // ascending
  const double scale = std::max(ev(2), 0.0);
  if (scale <= 0.0 || ev(1) <= 1e-12 * scale) {
    throw Error(ErrorKind::kDegenerateGeometry, "points are collinear or coincident");
  }
  if (std::max(ev(0), 0.0) > kPlaneDegeneracyRatio * ev(1)) {
    throw Error(ErrorKind::kDegenerateGeometry, "plane normal is ambiguous");
  }

  Vec3 n = es.eigenvectors().col(0).normalized();
  Eigen::Index imax = 0;
  n.cwiseAbs().maxCoeff(&imax);
  if (n(imax) < 0.0) n = -n;

  Plane plane;
  plane.n = n;
  plane.d = -n.dot(centroid);
  plane.point_count = static_cast<int>(points.size());
  plane.thickness = plane_thickness(plane.n, plane.d, points);
  return plane;
}

double plane_thickness(const Vec3& n, double d, std::span<const Vec3> points) {
  if (points.empty()) return 0.0;
  return kernels::plane_sq_dist_sum(points, n, d) / static_cast<double>(points.size());
}

double thickness_variance(double sigma_eps) {
  if (!(sigma_eps > 0.0)) {
    throw Error(ErrorKind::kNonPositiveInput, "sigma_eps must be positive");
  }
  // Extended precision so the result is the correctly rounded 2 s^4.
  const long double s2 = static_cast<long double>(sigma_eps) * sigma_eps;
  return static_cast<double>(2.0L * s2 * s2);
}

double sigma_from_thickness_variance(double variance) {
  if (!(variance > 0.0)) {
    throw Error(ErrorKind::kNonPositiveInput, "thickness variance must be positive");
  }
  return std::pow(0.5 * variance, 0.25);
}

}  // namespace planelio
