#include "planelio/kernels.hpp"

#if defined(PLANELIO_HAVE_AVX2)
#include <immintrin.h>

namespace planelio::kernels::avx2 {
namespace {

// Points are packed xyz doubles; lane k of a block reads point i + k.
inline void load_block(const double* base, __m256d& x, __m256d& y, __m256d& z) {
  const __m128i idx = _mm_setr_epi32(0, 3, 6, 9);
  x = _mm256_i32gather_pd(base + 0, idx, 8);
  y = _mm256_i32gather_pd(base + 1, idx, 8);
  z = _mm256_i32gather_pd(base + 2, idx, 8);
}

}  // namespace

void transform_points(std::span<const Vec3> src, const Mat3& r, const Vec3& t, std::span<Vec3> dst) {
  const std::size_t n = src.size();
  const std::size_t blocks = n / 4;
  const __m256d r00 = _mm256_set1_pd(r(0, 0)), r01 = _mm256_set1_pd(r(0, 1)), r02 = _mm256_set1_pd(r(0, 2));
  const __m256d r10 = _mm256_set1_pd(r(1, 0)), r11 = _mm256_set1_pd(r(1, 1)), r12 = _mm256_set1_pd(r(1, 2));
  const __m256d r20 = _mm256_set1_pd(r(2, 0)), r21 = _mm256_set1_pd(r(2, 1)), r22 = _mm256_set1_pd(r(2, 2));
  const __m256d tx = _mm256_set1_pd(t.x()), ty = _mm256_set1_pd(t.y()), tz = _mm256_set1_pd(t.z());
  alignas(32) double ox[4], oy[4], oz[4];
  for (std::size_t b = 0; b < blocks; ++b) {
    __m256d x, y, z;
    load_block(src[4 * b].data(), x, y, z);
    const __m256d nx = _mm256_add_pd(
        _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(r00, x), _mm256_mul_pd(r01, y)), _mm256_mul_pd(r02, z)), tx);
    const __m256d ny = _mm256_add_pd(
        _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(r10, x), _mm256_mul_pd(r11, y)), _mm256_mul_pd(r12, z)), ty);
    const __m256d nz = _mm256_add_pd(
        _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(r20, x), _mm256_mul_pd(r21, y)), _mm256_mul_pd(r22, z)), tz);
    _mm256_store_pd(ox, nx);
    _mm256_store_pd(oy, ny);
    _mm256_store_pd(oz, nz);
    for (int k = 0; k < 4; ++k) dst[4 * b + k] = Vec3(ox[k], oy[k], oz[k]);
  }
  scalar::transform_points(src.subspan(4 * blocks), r, t, dst.subspan(4 * blocks));
}

double plane_sq_dist_sum(std::span<const Vec3> pts, const Vec3& n, double d) {
  const std::size_t blocks = pts.size() / 4;
  const __m256d nx = _mm256_set1_pd(n.x()), ny = _mm256_set1_pd(n.y()), nz = _mm256_set1_pd(n.z());
  const __m256d dd = _mm256_set1_pd(d);
  __m256d acc = _mm256_setzero_pd();
  for (std::size_t b = 0; b < blocks; ++b) {
    __m256d x, y, z;
    load_block(pts[4 * b].data(), x, y, z);
    const __m256d e = _mm256_add_pd(
        _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(nx, x), _mm256_mul_pd(ny, y)), _mm256_mul_pd(nz, z)), dd);
    acc = _mm256_add_pd(acc, _mm256_mul_pd(e, e));
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  double sum = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  return sum + scalar::plane_sq_dist_sum(pts.subspan(4 * blocks), n, d);
}

void squared_distances(std::span<const Vec3> pts, const Vec3& q, std::span<double> out) {
  const std::size_t blocks = pts.size() / 4;
  const __m256d qx = _mm256_set1_pd(q.x()), qy = _mm256_set1_pd(q.y()), qz = _mm256_set1_pd(q.z());
  for (std::size_t b = 0; b < blocks; ++b) {
    __m256d x, y, z;
    load_block(pts[4 * b].data(), x, y, z);
    const __m256d dx = _mm256_sub_pd(x, qx);
    const __m256d dy = _mm256_sub_pd(y, qy);
    const __m256d dz = _mm256_sub_pd(z, qz);
    const __m256d s = _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(dx, dx), _mm256_mul_pd(dy, dy)),
                                    _mm256_mul_pd(dz, dz));
    _mm256_storeu_pd(out.data() + 4 * b, s);
  }
  scalar::squared_distances(pts.subspan(4 * blocks), q, out.subspan(4 * blocks));
}

}  // namespace planelio::kernels::avx2

#else

namespace planelio::kernels::avx2 {

void transform_points(std::span<const Vec3> src, const Mat3& r, const Vec3& t, std::span<Vec3> dst) {
  scalar::transform_points(src, r, t, dst);
}
double plane_sq_dist_sum(std::span<const Vec3> pts, const Vec3& n, double d) {
  return scalar::plane_sq_dist_sum(pts, n, d);
}
void squared_distances(std::span<const Vec3> pts, const Vec3& q, std::span<double> out) {
  scalar::squared_distances(pts, q, out);
}

}  // namespace planelio::kernels::avx2

#endif
