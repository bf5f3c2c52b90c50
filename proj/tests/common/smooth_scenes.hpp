#pragma once

// Single-ray scenes kept away from every kink of the renderer (tangency,
// depth-order swaps and the overlap-correction branches), plus a central
// finite-difference check of backward_image on them.

#include <algorithm>
#include <cmath>

#include "xfield/optimizer.hpp"
#include "xfield/rng.hpp"

namespace xfield::testing {

inline ConeBeamGeometry single_pixel_geometry(double angle) {
  ConeBeamGeometry g;
  g.width = 1;
  g.height = 1;
  g.detector_u = 0.05;
  g.detector_v = 0.05;
  g.angles = {angle};
  return g;
}

// Distance of the configuration to the nearest kink, in the units of the
// quantities that switch branches.
inline double kink_margin(const Scene& scene, const ConeBeamGeometry& g) {
  const Ray ray = generate_ray(g, 0, 0, 0);
  double margin = 1e300;
  for (const Ellipsoid& e : scene) {
    const ChordResult c = chord(e, ray);
    const double rad = 1.0 - (c.C - c.B * (c.B / c.A));
    margin = std::min(margin, std::abs(rad));
  }
  const SegmentList list = trace_pixel(scene, g, 0, 0, 0);
  for (std::size_t i = 1; i < list.size(); ++i) {
    const SegmentRecord& r = list[i];
    margin = std::min(margin, r.depth - list[i - 1].depth);
    if (r.predecessor < 0) continue;
    const SegmentRecord& p = list[static_cast<std::size_t>(r.predecessor)];
    const double entry = r.depth - 0.5 * r.length, exit = r.depth + 0.5 * r.length;
    const double pentry = p.depth - 0.5 * p.length, pexit = p.depth + 0.5 * p.length;
    margin = std::min({margin, std::abs(entry - pentry), std::abs(r.depth - pexit),
                       std::abs(exit - pexit), std::abs(exit - pexit - r.length)});
  }
  return margin;
}

// Random scene of 1-3 ellipsoids all hit by the single ray, at least `margin`
// from any kink.
inline Scene smooth_scene(Rng& rng, const ConeBeamGeometry& g, double margin = 1e-3) {
  const Ray ray = generate_ray(g, 0, 0, 0);
  for (;;) {
    Scene s;
    const int n = 1 + static_cast<int>(rng.below(3));
    for (int k = 0; k < n; ++k) {
      Ellipsoid e;
      const double t = g.source_to_origin + rng.uniform(-0.4, 0.4);
      e.center = ray.at(t) + 0.15 * rng.in_unit_ball();
      e.scale = Vec3(rng.uniform(0.15, 0.45), rng.uniform(0.15, 0.45), rng.uniform(0.15, 0.45));
      e.rotation = rng.unit_quaternion();
      e.sigma = rng.uniform(0.2, 1.0);
      s.push_back(e);
    }
    bool all_hit = true;
    for (const Ellipsoid& e : s) all_hit = all_hit && chord(e, ray).hit;
    if (all_hit && kink_margin(s, g) >= margin) return s;
  }
}

struct FdErrors {
  double center = 0.0, scale = 0.0, rotation = 0.0, sigma = 0.0;
  double sigma_identity = 0.0;  // max |dI/dsigma_i - corrected length_i|
  double max() const { return std::max({center, scale, rotation, sigma}); }
};

inline double rel_error(double an, double fd) {
  return std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
}

inline FdErrors fd_check(const Scene& s, const ConeBeamGeometry& g, double delta = 1e-5) {
  const std::vector<double> w{1.0};
  const GradientRecord rec = backward_image(s, g, 0, w);
  auto f = [&](const Scene& sc) { return render_view(sc, g, 0).values[0]; };
  FdErrors err;
  const SegmentList list = trace_pixel(s, g, 0, 0, 0);
  for (const SegmentRecord& r : list) {
    const double an = rec.grads[static_cast<std::size_t>(r.ellipsoid)].sigma;
    err.sigma_identity = std::max(err.sigma_identity, std::abs(an - r.corrected));
  }
  for (std::size_t e = 0; e < s.size(); ++e) {
    const EllipsoidGrad& gr = rec.grads[e];
    for (int k = 0; k < 3; ++k) {
      Scene a = s, b = s;
      a[e].center(k) += delta;
      b[e].center(k) -= delta;
      err.center = std::max(err.center, rel_error(gr.center(k), (f(a) - f(b)) / (2 * delta)));
      a = s;
      b = s;
      a[e].scale(k) += delta;
      b[e].scale(k) -= delta;
      err.scale = std::max(err.scale, rel_error(gr.scale(k), (f(a) - f(b)) / (2 * delta)));
    }
    for (int k = 0; k < 4; ++k) {
      // gradient is with respect to (w, x, y, z); Eigen stores (x, y, z, w)
      const int slot = (k + 3) % 4;
      Scene a = s, b = s;
      a[e].rotation.coeffs()[slot] += delta;
      b[e].rotation.coeffs()[slot] -= delta;
      a[e].rotation.normalize();
      b[e].rotation.normalize();
      err.rotation =
          std::max(err.rotation, rel_error(gr.rotation[k], (f(a) - f(b)) / (2 * delta)));
    }
    Scene a = s, b = s;
    a[e].sigma += delta;
    b[e].sigma -= delta;
    err.sigma = std::max(err.sigma, rel_error(gr.sigma, (f(a) - f(b)) / (2 * delta)));
  }
  return err;
}

}  // namespace xfield::testing
