#include <atomic>
#include <cstdlib>
#include <string>

#include "xfield/error.hpp"
#include "xfield/simd/kernels.hpp"

namespace xfield::simd {

namespace {

Isa detect() {
  if (const char* env = std::getenv("XFIELD_ISA")) {
    const std::string want(env);
    if (want == "scalar") return Isa::scalar;
    if (want == "avx2" && isa_available(Isa::avx2)) return Isa::avx2;
  }
  return isa_available(Isa::avx2) ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

const char* isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

bool isa_available(Isa isa) {
  if (isa == Isa::scalar) return true;
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_available(isa)) {
    throw InvalidParameter(std::string("simd: ") + isa_name(isa) +
                           " is not supported on this CPU");
  }
  current().store(isa, std::memory_order_relaxed);
}

void EllipsoidSoA::clear() {
  for (auto* v : {&cx, &cy, &cz, &m00, &m01, &m02, &m11, &m12, &m22}) v->clear();
  index.clear();
}

void EllipsoidSoA::reserve(std::size_t n) {
  for (auto* v : {&cx, &cy, &cz, &m00, &m01, &m02, &m11, &m12, &m22}) v->reserve(n);
  index.reserve(n);
}

void EllipsoidSoA::push_back(const double center[3], const double inv_cov[6], int id) {
  cx.push_back(center[0]);
  cy.push_back(center[1]);
  cz.push_back(center[2]);
  m00.push_back(inv_cov[0]);
  m01.push_back(inv_cov[1]);
  m02.push_back(inv_cov[2]);
  m11.push_back(inv_cov[3]);
  m12.push_back(inv_cov[4]);
  m22.push_back(inv_cov[5]);
  index.push_back(id);
}

void EllipsoidSoA::append(const EllipsoidSoA& o, std::size_t i) {
  const double c[3] = {o.cx[i], o.cy[i], o.cz[i]};
  const double m[6] = {o.m00[i], o.m01[i], o.m02[i], o.m11[i], o.m12[i], o.m22[i]};
  push_back(c, m, o.index.empty() ? 0 : o.index[i]);
}

void chord_batch(const EllipsoidSoA& soa, const RayParams& ray, double* depth,
                 double* length) {
  if (active_isa() == Isa::avx2) {
    avx2::chord_batch(soa, ray, depth, length);
  } else {
    scalar::chord_batch(soa, ray, depth, length);
  }
}

double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionMismatch("simd::dot: length mismatch");
  return active_isa() == Isa::avx2 ? avx2::dot(x.data(), y.data(), x.size())
                                   : scalar::dot(x.data(), y.data(), x.size());
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw DimensionMismatch("simd::axpy: length mismatch");
  if (active_isa() == Isa::avx2) {
    avx2::axpy(a, x.data(), y.data(), x.size());
  } else {
    scalar::axpy(a, x.data(), y.data(), x.size());
  }
}

void xpby(std::span<const double> x, double b, std::span<double> y) {
  if (x.size() != y.size()) throw DimensionMismatch("simd::xpby: length mismatch");
  if (active_isa() == Isa::avx2) {
    avx2::xpby(x.data(), b, y.data(), x.size());
  } else {
    scalar::xpby(x.data(), b, y.data(), x.size());
  }
}

}  // namespace xfield::simd
