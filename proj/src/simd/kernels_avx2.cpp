// AVX2 variants. Target attributes are per function (no -mavx2 on the file),
// so inline library code instantiated here stays baseline-encoded.
#include <cmath>
#include <cstddef>

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>
#define XFIELD_HAVE_X86 1
#else
#define XFIELD_HAVE_X86 0
#endif

#include "xfield/simd/kernels.hpp"

namespace xfield::simd::avx2 {

#if XFIELD_HAVE_X86

#define XFIELD_AVX2 __attribute__((target("avx2")))

// (r0*v0 + r1*v1) + r2*v2
XFIELD_AVX2 static inline __m256d row(__m256d r0, __m256d r1, __m256d r2, __m256d v0,
                                      __m256d v1, __m256d v2) {
  return _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(r0, v0), _mm256_mul_pd(r1, v1)),
                       _mm256_mul_pd(r2, v2));
}

XFIELD_AVX2 void chord_batch(const EllipsoidSoA& soa, const RayParams& ray,
                             double* depth, double* length) {
  const std::size_t n = soa.size();
  const __m256d ox = _mm256_set1_pd(ray.ox), oy = _mm256_set1_pd(ray.oy),
                oz = _mm256_set1_pd(ray.oz);
  const __m256d dx = _mm256_set1_pd(ray.dx), dy = _mm256_set1_pd(ray.dy),
                dz = _mm256_set1_pd(ray.dz);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d two = _mm256_set1_pd(2.0);
  const __m256d zero = _mm256_setzero_pd();

  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d cx = _mm256_loadu_pd(soa.cx.data() + k);
    const __m256d cy = _mm256_loadu_pd(soa.cy.data() + k);
    const __m256d cz = _mm256_loadu_pd(soa.cz.data() + k);
    const __m256d tc = _mm256_add_pd(
        _mm256_add_pd(_mm256_mul_pd(_mm256_sub_pd(cx, ox), dx),
                      _mm256_mul_pd(_mm256_sub_pd(cy, oy), dy)),
        _mm256_mul_pd(_mm256_sub_pd(cz, oz), dz));
    const __m256d ax = _mm256_sub_pd(_mm256_add_pd(ox, _mm256_mul_pd(tc, dx)), cx);
    const __m256d ay = _mm256_sub_pd(_mm256_add_pd(oy, _mm256_mul_pd(tc, dy)), cy);
    const __m256d az = _mm256_sub_pd(_mm256_add_pd(oz, _mm256_mul_pd(tc, dz)), cz);

    const __m256d m00 = _mm256_loadu_pd(soa.m00.data() + k);
    const __m256d m01 = _mm256_loadu_pd(soa.m01.data() + k);
    const __m256d m02 = _mm256_loadu_pd(soa.m02.data() + k);
    const __m256d m11 = _mm256_loadu_pd(soa.m11.data() + k);
    const __m256d m12 = _mm256_loadu_pd(soa.m12.data() + k);
    const __m256d m22 = _mm256_loadu_pd(soa.m22.data() + k);

    const __m256d mdx = row(m00, m01, m02, dx, dy, dz);
    const __m256d mdy = row(m01, m11, m12, dx, dy, dz);
    const __m256d mdz = row(m02, m12, m22, dx, dy, dz);
    const __m256d max_ = row(m00, m01, m02, ax, ay, az);
    const __m256d may = row(m01, m11, m12, ax, ay, az);
    const __m256d maz = row(m02, m12, m22, ax, ay, az);

    const __m256d a = row(dx, dy, dz, mdx, mdy, mdz);
    const __m256d b = row(ax, ay, az, mdx, mdy, mdz);
    const __m256d c = row(ax, ay, az, max_, may, maz);
    const __m256d s = _mm256_div_pd(b, a);
    // min(x, 1) with the scalar std::min tie behaviour: pick 1 only if 1 < x.
    const __m256d raw = _mm256_sub_pd(one, _mm256_sub_pd(c, _mm256_mul_pd(b, s)));
    const __m256d radicand = _mm256_blendv_pd(raw, one, _mm256_cmp_pd(one, raw, _CMP_LT_OQ));
    _mm256_storeu_pd(depth + k, _mm256_sub_pd(tc, s));
    const __m256d len = _mm256_mul_pd(_mm256_div_pd(two, _mm256_sqrt_pd(a)),
                                      _mm256_sqrt_pd(radicand));
    const __m256d hit = _mm256_and_pd(_mm256_cmp_pd(radicand, zero, _CMP_GT_OQ),
                                      _mm256_cmp_pd(a, zero, _CMP_GT_OQ));
    _mm256_storeu_pd(length + k, _mm256_and_pd(hit, len));
  }
  scalar::chord_range(soa, k, n, ray, depth, length);
}

XFIELD_AVX2 double dot(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  double r = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) r = r + x[i] * y[i];
  return r;
}

XFIELD_AVX2 void axpy(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i),
                                          _mm256_mul_pd(va, _mm256_loadu_pd(x + i))));
  }
  for (; i < n; ++i) y[i] = y[i] + a * x[i];
}

XFIELD_AVX2 void xpby(const double* x, double b, double* y, std::size_t n) {
  const __m256d vb = _mm256_set1_pd(b);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(x + i),
                                          _mm256_mul_pd(vb, _mm256_loadu_pd(y + i))));
  }
  for (; i < n; ++i) y[i] = x[i] + b * y[i];
}

#else  // no x86: forward to the scalar reference

void chord_batch(const EllipsoidSoA& soa, const RayParams& ray, double* depth,
                 double* length) {
  scalar::chord_batch(soa, ray, depth, length);
}
double dot(const double* x, const double* y, std::size_t n) { return scalar::dot(x, y, n); }
void axpy(double a, const double* x, double* y, std::size_t n) { scalar::axpy(a, x, y, n); }
void xpby(const double* x, double b, double* y, std::size_t n) { scalar::xpby(x, b, y, n); }

#endif

}  // namespace xfield::simd::avx2
