#include <doctest.h>

#include <cmath>
#include <vector>

#include "scenes.hpp"
#include "xfield/error.hpp"
#include "xfield/projector.hpp"

using namespace xfield;
using xfield::testing::random_ellipsoid;
using xfield::testing::small_geometry;

namespace {

Segment seg(int id, double entry, double exit) { return {id, 0.5 * (entry + exit), exit - entry}; }

double total(const SegmentList& list) {
  double s = 0.0;
  for (const auto& r : list) s += r.corrected;
  return s;
}

// Scene of k ellipsoids whose bounding spheres are pairwise disjoint.
Scene disjoint_scene(Rng& rng, int k) {
  Scene s;
  while (static_cast<int>(s.size()) < k) {
    Ellipsoid e = random_ellipsoid(rng, 0.6, 0.08, 0.25);
    bool ok = true;
    for (const auto& o : s) {
      if ((o.center - e.center).norm() < o.scale.maxCoeff() + e.scale.maxCoeff() + 0.01) ok = false;
    }
    if (ok) s.push_back(e);
  }
  return s;
}

}  // namespace

TEST_SUITE("projector") {
  TEST_CASE("segment correction hand cases") {
    // disjoint
    std::vector<Segment> a{seg(0, 0, 2), seg(1, 3, 5)};
    SegmentList r = correct_segments(a);
    CHECK(r[0].corrected == 2.0);
    CHECK(r[1].corrected == 2.0);
    // partial overlap keeps the tail past the earlier exit
    a = {seg(0, 0, 2), seg(1, 0.5, 2.5)};
    r = correct_segments(a);
    CHECK(r[1].corrected == doctest::Approx(0.5));
    CHECK(r[1].predecessor == 0);
    // a later chord inside an earlier one adds nothing
    a = {seg(0, 0, 4), seg(1, 2, 3)};
    r = correct_segments(a);
    CHECK(r[1].corrected == 0.0);
    CHECK(total(r) == doctest::Approx(4.0));
  }

  TEST_CASE("enclosing chord subtracts the overlap only with the containment rule") {
    const std::vector<Segment> a{seg(0, 1, 2), seg(1, 0, 4)};
    const SegmentList aware = correct_segments(a, SegmentRule::containment_aware);
    CHECK(aware[1].corrected == doctest::Approx(3.0));
    CHECK(total(aware) == doctest::Approx(4.0));
    const SegmentList literal = correct_segments(a, SegmentRule::first_pass);
    CHECK(literal[1].corrected == doctest::Approx(2.0));
  }

  TEST_CASE("two chords sum to their union length") {
    Rng rng(3);
    for (int k = 0; k < 1000; ++k) {
      const double e0 = rng.uniform(0, 5), l0 = rng.uniform(0, 3);
      const double e1 = rng.uniform(0, 5), l1 = rng.uniform(0, 3);
      std::vector<Segment> s{seg(0, e0, e0 + l0), seg(1, e1, e1 + l1)};
      if (s[1].depth < s[0].depth) std::swap(s[0], s[1]);
      const double overlap =
          std::max(0.0, std::min(e0 + l0, e1 + l1) - std::max(e0, e1));
      const SegmentList r = correct_segments(s);
      CHECK(total(r) == doctest::Approx(l0 + l1 - overlap).epsilon(1e-12));
      for (const auto& rec : r) CHECK(rec.corrected >= 0.0);
    }
  }

  TEST_CASE("coefficients reproduce the corrected length") {
    Rng rng(4);
    for (int k = 0; k < 200; ++k) {
      std::vector<Segment> s;
      for (int i = 0; i < 5; ++i) {
        const double e = rng.uniform(0, 5);
        s.push_back(seg(i, e, e + rng.uniform(0.1, 2)));
      }
      std::sort(s.begin(), s.end(), [](auto& x, auto& y) { return x.depth < y.depth; });
      const SegmentList r = correct_segments(s);
      for (const auto& rec : r) {
        double pe = 0.0, px = 0.0;
        if (rec.predecessor >= 0) {
          const auto& p = r[static_cast<std::size_t>(rec.predecessor)];
          pe = p.depth - 0.5 * p.length;
          px = p.depth + 0.5 * p.length;
        }
        const double v = rec.coeff[0] * (rec.depth - 0.5 * rec.length) +
                         rec.coeff[1] * (rec.depth + 0.5 * rec.length) + rec.coeff[2] * pe +
                         rec.coeff[3] * px;
        CHECK(v == doctest::Approx(rec.corrected).epsilon(1e-12).scale(1.0));
      }
    }
  }

  TEST_CASE("unsorted or negative input violates the contract") {
    std::vector<Segment> a{seg(0, 2, 4), seg(1, 0, 1)};
    CHECK_THROWS_AS(correct_segments(a), ContractViolation);
    a = {{0, 1.0, -0.5}};
    CHECK_THROWS_AS(correct_segments(a), ContractViolation);
  }

  TEST_CASE("centre ray through a sphere integrates sigma times the diameter") {
    ConeBeamGeometry g = small_geometry(33, 1);
    Ellipsoid e;
    e.scale = Vec3::Constant(0.5);
    e.sigma = 0.8;
    const DetectorImage img = render_view({e}, g, 0);
    CHECK(img.at(16, 16) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(img.at(0, 0) == 0.0);
  }

  TEST_CASE("disjoint scenes match the raymarch oracle") {
    Rng rng(17);
    const ConeBeamGeometry g = small_geometry(20, 2);
    for (int trial = 0; trial < 3; ++trial) {
      const Scene scene = disjoint_scene(rng, 6);
      for (std::size_t v = 0; v < g.views(); ++v) {
        const DetectorImage img = render_view(scene, g, v);
        for (int j = 0; j < g.height; j += 3) {
          for (int i = 0; i < g.width; i += 3) {
            const double ref = oracle_raymarch(scene, generate_ray(g, v, i, j), 1e-4);
            CHECK(std::abs(img.at(i, j) - ref) < 5e-4);
          }
        }
      }
    }
  }

  TEST_CASE("overlapping pair covers the union of its chords") {
    Ellipsoid a, b;
    a.center = Vec3(-0.1, 0, 0);
    a.scale = Vec3(0.4, 0.3, 0.3);
    a.sigma = 0.5;
    b.center = Vec3(0.15, 0.05, 0);
    b.scale = Vec3(0.3, 0.35, 0.25);
    b.sigma = 1.0;
    const ConeBeamGeometry g = small_geometry(24, 3);
    const Scene scene{a, b};
    int both = 0;
    for (std::size_t v = 0; v < g.views(); ++v) {
      for (int j = 0; j < g.height; ++j) {
        for (int i = 0; i < g.width; ++i) {
          const SegmentList list = trace_pixel(scene, g, v, i, j);
          if (list.size() != 2) continue;
          ++both;
          const double e0 = list[0].depth - 0.5 * list[0].length;
          const double x0 = list[0].depth + 0.5 * list[0].length;
          const double e1 = list[1].depth - 0.5 * list[1].length;
          const double x1 = list[1].depth + 0.5 * list[1].length;
          const double uni = (x0 - e0) + (x1 - e1) - std::max(0.0, std::min(x0, x1) - std::max(e0, e1));
          CHECK(std::abs(total(list) - uni) < 1e-9);
        }
      }
    }
    CHECK(both > 50);
  }

  TEST_CASE("accumulate weights corrected lengths") {
    const std::vector<Segment> s{seg(0, -1, 1), seg(1, -0.5, 1.5)};
    const SegmentList r = correct_segments(s);
    CHECK(r[0].corrected == doctest::Approx(2.0));
    CHECK(r[1].corrected == doctest::Approx(0.5));
    const std::vector<double> sig{1.0, 2.0};
    CHECK(accumulate(r, sig) == doctest::Approx(3.0));
    CHECK(accumulate({}, sig) == 0.0);
    const std::vector<Segment> d{seg(0, -1, 1), seg(1, 2.5, 3.5)};
    CHECK(correct_segments(d)[1].corrected == doctest::Approx(1.0));
  }

  TEST_CASE("culling modes render identical images") {
    Rng rng(23);
    const Scene scene = xfield::testing::random_scene(rng, 40);
    const ConeBeamGeometry g = small_geometry(40, 2);
    for (std::size_t v = 0; v < g.views(); ++v) {
      RenderOptions o;
      o.culling = Culling::obb;
      const DetectorImage a = render_view(scene, g, v, o);
      o.culling = Culling::aabb;
      const DetectorImage b = render_view(scene, g, v, o);
      o.culling = Culling::none;
      const DetectorImage c = render_view(scene, g, v, o);
      CHECK(a.values == b.values);
      CHECK(a.values == c.values);
    }
  }

  TEST_CASE("render is linear in sigma") {
    Rng rng(29);
    Scene scene = xfield::testing::random_scene(rng, 15);
    const ConeBeamGeometry g = small_geometry(24, 1);
    const DetectorImage base = render_view(scene, g, 0);
    for (auto& e : scene) e.sigma *= 2.0;
    const DetectorImage doubled = render_view(scene, g, 0);
    for (std::size_t p = 0; p < base.size(); ++p) CHECK(doubled.values[p] == 2.0 * base.values[p]);
    for (auto& e : scene) e.sigma *= 0.15;
    const DetectorImage scaled = render_view(scene, g, 0);
    for (std::size_t p = 0; p < base.size(); ++p) {
      CHECK(scaled.values[p] == doctest::Approx(0.3 * base.values[p]).epsilon(1e-12));
    }
  }

  TEST_CASE("empty scene renders zeros") {
    const ConeBeamGeometry g = small_geometry(16, 2);
    const ProjectionStack s = render_stack({}, g);
    REQUIRE(s.views.size() == 2);
    for (const auto& v : s.views) {
      for (double x : v.values) CHECK(x == 0.0);
    }
  }

  TEST_CASE("ellipsoid around the source is excluded") {
    ConeBeamGeometry g = small_geometry(16, 1);
    Ellipsoid e;
    e.center = g.pose(0).source;
    e.scale = Vec3::Constant(0.5);
    e.sigma = 1.0;
    for (Culling c : {Culling::obb, Culling::aabb, Culling::none}) {
      RenderStats stats;
      RenderOptions o;
      o.culling = c;
      const DetectorImage img = render_view({e}, g, 0, o, &stats);
      CHECK(stats.degenerate == 1);
      for (double x : img.values) CHECK(x == 0.0);
    }
  }

  TEST_CASE("linear and log images are inverse") {
    DetectorImage img(4, 3);
    for (std::size_t p = 0; p < img.size(); ++p) img.values[p] = 0.1 * static_cast<double>(p);
    const DetectorImage back = render_log(render_linear(img, 2.5), 2.5);
    for (std::size_t p = 0; p < img.size(); ++p) {
      CHECK(back.values[p] == doctest::Approx(img.values[p]).epsilon(1e-12).scale(1.0));
    }
    CHECK(render_linear(img, 2.5).values[0] == 2.5);
  }

  TEST_CASE("culling names parse") {
    CHECK(parse_culling("obb") == Culling::obb);
    CHECK(parse_culling("none") == Culling::none);
    CHECK(std::string(culling_name(Culling::aabb)) == "aabb");
    CHECK_THROWS(parse_culling("sphere"));
  }

  TEST_CASE("orbit is orthogonal to the principal axis") {
    Scene scene;
    for (int i = 0; i < 5; ++i) {
      Ellipsoid e;
      e.center = Vec3(0.0, 0.0, -0.6 + 0.3 * i) + Vec3(0.2, 0.1, 0.0);
      e.scale = Vec3(0.1, 0.1, 0.2);
      e.sigma = 1.0;
      scene.push_back(e);
    }
    const Vec3 axis = principal_axis(scene);
    CHECK(std::abs(axis.z()) == doctest::Approx(1.0).epsilon(1e-9));
    const ConeBeamGeometry g = orbit_geometry(scene, small_geometry(16, 1), 12);
    REQUIRE(g.views() == 12);
    CHECK_NOTHROW(g.validate());
    CHECK((g.center - Vec3(0.2, 0.1, 0.0)).norm() < 1e-12);
    CHECK(std::abs(g.frame.col(2).dot(axis)) == doctest::Approx(1.0));
    for (std::size_t v = 0; v < 12; ++v) {
      CHECK(g.angles[v] == doctest::Approx(2.0 * M_PI * static_cast<double>(v) / 12.0));
      const Vec3 offset = g.pose(v).source - g.center;
      CHECK(std::abs(offset.dot(axis)) < 1e-9);
      CHECK(offset.norm() == doctest::Approx(g.source_to_origin));
    }
  }
}
