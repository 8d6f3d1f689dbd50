#include <atomic>
#include <cstdlib>
#include <cstring>

#include "planelio/kernels.hpp"

namespace planelio::kernels {
namespace {

Isa detect() {
  if (const char* env = std::getenv("PLANELIO_FORCE_SCALAR"); env && std::strcmp(env, "0") != 0) {
    return Isa::kScalar;
  }
  return avx2_available() ? Isa::kAvx2 : Isa::kScalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

const char* to_string(Isa isa) { return isa == Isa::kAvx2 ? "avx2" : "scalar"; }

bool avx2_available() {
#if defined(PLANELIO_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

Isa set_isa(Isa isa) {
  if (isa == Isa::kAvx2 && !avx2_available()) isa = Isa::kScalar;
  current().store(isa, std::memory_order_relaxed);
  return isa;
}

void transform_points(std::span<const Vec3> src, const Mat3& r, const Vec3& t, std::span<Vec3> dst) {
  if (active_isa() == Isa::kAvx2) {
    avx2::transform_points(src, r, t, dst);
  } else {
    scalar::transform_points(src, r, t, dst);
  }
}

double plane_sq_dist_sum(std::span<const Vec3> pts, const Vec3& n, double d) {
  return active_isa() == Isa::kAvx2 ? avx2::plane_sq_dist_sum(pts, n, d)
                                    : scalar::plane_sq_dist_sum(pts, n, d);
}

void squared_distances(std::span<const Vec3> pts, const Vec3& q, std::span<double> out) {
  if (active_isa() == Isa::kAvx2) {
    avx2::squared_distances(pts, q, out);
  } else {
    scalar::squared_distances(pts, q, out);
  }
}

}  // namespace planelio::kernels
