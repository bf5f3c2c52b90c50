#pragma once

// Data-parallel inner loops with a scalar reference and an AVX2 variant.
// The AVX2 paths use no fused multiply-add and mirror the scalar operation
// order (including the 4-lane reduction tree in dot), so both variants
// produce bit-identical results. The active variant is chosen once at start
// up from CPU support and the XFIELD_ISA environment variable
// ("scalar" or "avx2").

#include <cstddef>
#include <span>
#include <vector>

namespace xfield::simd {

enum class Isa { scalar, avx2 };

const char* isa_name(Isa isa);
bool isa_available(Isa isa);
Isa active_isa();
/// Override the dispatch target; throws InvalidParameter if unavailable.
void set_active_isa(Isa isa);

/// Structure-of-arrays copy of ellipsoid centres and inverse covariances.
struct EllipsoidSoA {
  std::vector<double> cx, cy, cz;
  std::vector<double> m00, m01, m02, m11, m12, m22;
  std::vector<int> index;  // caller-defined id carried along

  std::size_t size() const { return cx.size(); }
  void clear();
  void reserve(std::size_t n);
  void push_back(const double center[3], const double inv_cov[6], int id);
  void append(const EllipsoidSoA& other, std::size_t i);
};

struct RayParams {
  double ox, oy, oz;
  double dx, dy, dz;
};

/// For every ellipsoid in `soa`: midpoint depth and chord length along the
/// ray (length 0 on a miss). `depth` and `length` hold soa.size() slots.
void chord_batch(const EllipsoidSoA& soa, const RayParams& ray, double* depth,
                 double* length);

double dot(std::span<const double> x, std::span<const double> y);
/// y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y);
/// y = x + b * y
void xpby(std::span<const double> x, double b, std::span<double> y);

namespace scalar {
/// Slots [begin, end) only.
void chord_range(const EllipsoidSoA& soa, std::size_t begin, std::size_t end,
                 const RayParams& ray, double* depth, double* length);
void chord_batch(const EllipsoidSoA& soa, const RayParams& ray, double* depth,
                 double* length);
double dot(const double* x, const double* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void xpby(const double* x, double b, double* y, std::size_t n);
}  // namespace scalar

namespace avx2 {
void chord_batch(const EllipsoidSoA& soa, const RayParams& ray, double* depth,
                 double* length);
double dot(const double* x, const double* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void xpby(const double* x, double b, double* y, std::size_t n);
}  // namespace avx2

}  // namespace xfield::simd
