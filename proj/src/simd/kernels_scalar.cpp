#include <algorithm>
#include <cmath>

#include "xfield/simd/kernels.hpp"

namespace xfield::simd::scalar {

void chord_range(const EllipsoidSoA& soa, std::size_t begin, std::size_t end,
                 const RayParams& ray, double* depth, double* length) {
  const double ox = ray.ox, oy = ray.oy, oz = ray.oz;
  const double dx = ray.dx, dy = ray.dy, dz = ray.dz;
  for (std::size_t k = begin; k < end; ++k) {
    const double cx = soa.cx[k], cy = soa.cy[k], cz = soa.cz[k];
    const double tc = (cx - ox) * dx + (cy - oy) * dy + (cz - oz) * dz;
    const double ax = (ox + tc * dx) - cx;
    const double ay = (oy + tc * dy) - cy;
    const double az = (oz + tc * dz) - cz;

    const double m00 = soa.m00[k], m01 = soa.m01[k], m02 = soa.m02[k];
    const double m11 = soa.m11[k], m12 = soa.m12[k], m22 = soa.m22[k];
    const double mdx = m00 * dx + m01 * dy + m02 * dz;
    const double mdy = m01 * dx + m11 * dy + m12 * dz;
    const double mdz = m02 * dx + m12 * dy + m22 * dz;
    const double max_ = m00 * ax + m01 * ay + m02 * az;
    const double may = m01 * ax + m11 * ay + m12 * az;
    const double maz = m02 * ax + m12 * ay + m22 * az;

    const double a = dx * mdx + dy * mdy + dz * mdz;
    const double b = ax * mdx + ay * mdy + az * mdz;
    const double c = ax * max_ + ay * may + az * maz;
    const double s = b / a;
    const double radicand = std::min(1.0 - (c - b * s), 1.0);
    depth[k] = tc - s;
    length[k] = (radicand > 0.0 && a > 0.0) ? (2.0 / std::sqrt(a)) * std::sqrt(radicand)
                                            : 0.0;
  }
}

void chord_batch(const EllipsoidSoA& soa, const RayParams& ray, double* depth,
                 double* length) {
  chord_range(soa, 0, soa.size(), ray, depth, length);
}

double dot(const double* x, const double* y, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 = s0 + x[i] * y[i];
    s1 = s1 + x[i + 1] * y[i + 1];
    s2 = s2 + x[i + 2] * y[i + 2];
    s3 = s3 + x[i + 3] * y[i + 3];
  }
  double r = (s0 + s1) + (s2 + s3);
  for (; i < n; ++i) r = r + x[i] * y[i];
  return r;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + a * x[i];
}

void xpby(const double* x, double b, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] + b * y[i];
}

}  // namespace xfield::simd::scalar
