#pragma once

#include <span>

#include "planelio/rotations.hpp"

namespace planelio {

/// Plane n^T p + d = 0 with the diagnostics of the fit that produced it.
struct Plane {
  Vec3 n = Vec3::UnitZ();
  double d = 0.0;
  double thickness = 0.0;  ///< mean squared point-to-plane distance of the fit points [m^2]
  int point_count = 0;
};

/// Eigenvalue ratio (smallest / middle) above which a fit is rejected.
inline constexpr double kPlaneDegeneracyRatio = 0.9;

/// Total-least-squares plane through the centroid. The normal is the
/// smallest-eigenvalue eigenvector of the scatter matrix, with its
/// largest-magnitude component made positive.
/// Throws Error(kDegenerateGeometry) for fewer than three points, collinear
/// sets, or an ambiguous normal.
Plane fit_plane(std::span<const Vec3> points);

/// Signed distance n^T p + d.
inline double point_to_plane(const Plane& plane, const Vec3& p) { return plane.n.dot(p) + plane.d; }

/// Mean squared point-to-plane distance of `points` to (n, d).
double plane_thickness(const Vec3& n, double d, std::span<const Vec3> points);

/// Variance of the plane thickness for a point-to-plane noise STD sigma_eps:
/// 2 * (sigma_eps^2)^2. Throws Error(kNonPositiveInput) for sigma_eps <= 0.
double thickness_variance(double sigma_eps);

/// Inverse of thickness_variance: the point-to-plane STD implied by a
/// thickness variance.
double sigma_from_thickness_variance(double variance);

}  // namespace planelio
