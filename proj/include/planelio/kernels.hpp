#pragma once

#include <span>

#include "planelio/rotations.hpp"

// Data-parallel point kernels. Each kernel has a scalar reference
// implementation and, on x86-64, an AVX2 variant; the public entry points
// dispatch at runtime to the best variant the CPU supports. Setting the
// environment variable PLANELIO_FORCE_SCALAR=1 pins the scalar path.
//
// transform_points and squared_distances are bit-identical across variants
// (no FMA contraction, same operation order). plane_sq_dist_sum reorders the
// reduction and agrees to rounding.

namespace planelio::kernels {

enum class Isa { kScalar, kAvx2 };

const char* to_string(Isa isa);

bool avx2_available();
Isa active_isa();
/// Overrides the dispatch choice; requesting kAvx2 on a machine without it
/// falls back to kScalar. Returns the ISA actually selected.
Isa set_isa(Isa isa);

/// dst[i] = r * src[i] + t. dst may alias src.
void transform_points(std::span<const Vec3> src, const Mat3& r, const Vec3& t, std::span<Vec3> dst);

/// Sum over points of (n . p + d)^2.
double plane_sq_dist_sum(std::span<const Vec3> pts, const Vec3& n, double d);

/// out[i] = |pts[i] - q|^2.
void squared_distances(std::span<const Vec3> pts, const Vec3& q, std::span<double> out);

namespace scalar {
void transform_points(std::span<const Vec3> src, const Mat3& r, const Vec3& t, std::span<Vec3> dst);
double plane_sq_dist_sum(std::span<const Vec3> pts, const Vec3& n, double d);
void squared_distances(std::span<const Vec3> pts, const Vec3& q, std::span<double> out);
}  // namespace scalar

namespace avx2 {
void transform_points(std::span<const Vec3> src, const Mat3& r, const Vec3& t, std::span<Vec3> dst);
double plane_sq_dist_sum(std::span<const Vec3> pts, const Vec3& n, double d);
void squared_distances(std::span<const Vec3> pts, const Vec3& q, std::span<double> out);
}  // namespace avx2

}  // namespace planelio::kernels
