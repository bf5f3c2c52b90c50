#include <doctest.h>

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "chord_oracle.hpp"
#include "scenes.hpp"
#include "xfield/error.hpp"
#include "xfield/geometry.hpp"

using namespace xfield;
using xfield::testing::random_ellipsoid;
using xfield::testing::root_chord;

namespace {

Ellipsoid sphere(const Vec3& c, double r) {
  Ellipsoid e;
  e.center = c;
  e.scale = Vec3::Constant(r);
  e.sigma = 1.0;
  return e;
}

Ray ray_from(const Vec3& o, const Vec3& d) {
  Ray r;
  r.origin = o;
  r.direction = d.normalized();
  r.t_near = 0.0;
  r.t_far = 100.0;
  return r;
}

}  // namespace

TEST_SUITE("geometry") {
  TEST_CASE("ellipsoid invariants are enforced") {
    Ellipsoid e = sphere(Vec3::Zero(), 1.0);
    CHECK_NOTHROW(e.validate());
    e.scale.x() = 0.0;
    CHECK_THROWS_AS(e.validate(), InvalidParameter);
    e = sphere(Vec3::Zero(), 1.0);
    e.rotation = Quat(1.0, 0.1, 0.0, 0.0);
    CHECK_THROWS_AS(e.validate(), InvalidParameter);
    e = sphere(Vec3::Zero(), 1.0);
    e.sigma = -1e-3;
    CHECK_THROWS_AS(e.validate(), InvalidParameter);
  }

  TEST_CASE("covariance is symmetric positive definite with a matching inverse") {
    Rng rng(11);
    for (int k = 0; k < 50; ++k) {
      const Ellipsoid e = random_ellipsoid(rng);
      const Covariance c = covariance(e);
      CHECK((c.matrix - c.matrix.transpose()).cwiseAbs().maxCoeff() < 1e-15);
      const Eigen::SelfAdjointEigenSolver<Mat3> eig(c.matrix);
      CHECK(eig.eigenvalues().minCoeff() > 0.0);
      CHECK((c.matrix * c.inverse - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
      // eigenvalues are the squared semi-axes
      Vec3 s2 = e.scale.array().square();
      std::sort(s2.data(), s2.data() + 3);
      CHECK((eig.eigenvalues() - s2).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  TEST_CASE("l_max is the diameter along the direction") {
    Ellipsoid e = sphere(Vec3::Zero(), 1.0);
    e.scale = Vec3(3.0, 1.0, 0.5);
    CHECK(l_max(e, Vec3::UnitX()) == doctest::Approx(6.0).epsilon(1e-14));
    CHECK(l_max(e, Vec3::UnitY()) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(l_max(e, Vec3::UnitZ()) == doctest::Approx(1.0).epsilon(1e-14));
  }

  TEST_CASE("chord hand cases") {
    const Ellipsoid unit = sphere(Vec3::Zero(), 1.0);
    ChordResult c = chord(unit, ray_from(Vec3(-5, 0, 0), Vec3::UnitX()));
    CHECK(c.hit);
    CHECK(c.length == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(c.depth == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(c.entry() == doctest::Approx(4.0).epsilon(1e-15));

    const Ellipsoid big = sphere(Vec3::Zero(), 2.0);
    c = chord(big, ray_from(Vec3(-5, 1, 0), Vec3::UnitX()));
    CHECK(c.length == doctest::Approx(2.0 * std::sqrt(3.0)).epsilon(1e-14));

    // tangent and outside rays miss
    c = chord(unit, ray_from(Vec3(-5, 1, 0), Vec3::UnitX()));
    CHECK_FALSE(c.hit);
    CHECK(c.length == 0.0);
    c = chord(unit, ray_from(Vec3(-5, 1.5, 0), Vec3::UnitX()));
    CHECK_FALSE(c.hit);
  }

  TEST_CASE("chord agrees with the quadratic roots for random pairs") {
    Rng rng(5);
    int hits = 0;
    for (int k = 0; k < 500; ++k) {
      const Ellipsoid e = random_ellipsoid(rng);
      const Vec3 o(rng.uniform(-3, 3), rng.uniform(-3, 3), -4.0);
      const Vec3 target(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
      const Ray ray = ray_from(o, target - o);
      const ChordResult c = chord(e, ray);
      double t0 = 0, t1 = 0;
      const bool hit = root_chord(e, ray, t0, t1);
      if (!hit) {
        CHECK_FALSE(c.hit);
        continue;
      }
      ++hits;
      REQUIRE(c.hit);
      CHECK(std::abs(c.length - (t1 - t0)) <= 1e-9 * (t1 - t0) + 1e-13);
      CHECK(std::abs(c.entry() - t0) <= 1e-9 * std::abs(t0));
      CHECK(std::abs(c.exit() - t1) <= 1e-9 * std::abs(t1));
    }
    CHECK(hits > 100);
  }

  TEST_CASE("chord length never exceeds l_max") {
    Rng rng(8);
    for (int k = 0; k < 300; ++k) {
      const Ellipsoid e = random_ellipsoid(rng);
      const Vec3 o(rng.uniform(-2, 2), rng.uniform(-2, 2), 3.0);
      const Ray ray = ray_from(o, e.center + Vec3(rng.uniform(-0.2, 0.2), 0.0, 0.0) - o);
      const ChordResult c = chord(e, ray);
      CHECK(c.length <= l_max(e, ray.direction) * (1.0 + 1e-12));
    }
  }

  TEST_CASE("rotation matrix is orthonormal and matches Eigen") {
    Rng rng(2);
    for (int k = 0; k < 20; ++k) {
      const Quat q = rng.unit_quaternion();
      const Mat3 r = rotation_matrix(q);
      CHECK((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-14);
      CHECK((r - q.toRotationMatrix()).cwiseAbs().maxCoeff() < 1e-14);
    }
  }

  TEST_CASE("silhouette contains exactly the pixels whose rays hit") {
    Rng rng(21);
    const ConeBeamGeometry g = xfield::testing::small_geometry(24, 3);
    for (int k = 0; k < 10; ++k) {
      const Ellipsoid e = random_ellipsoid(rng);
      for (std::size_t v = 0; v < g.views(); ++v) {
        const Conic2D conic = project_silhouette(e, g, v);
        REQUIRE_FALSE(conic.degenerate);
        const OrientedBox2D box = obb_of_conic(conic);
        for (int j = 0; j < g.height; ++j) {
          for (int i = 0; i < g.width; ++i) {
            const Vec2 p = g.pixel_center(i, j);
            const double val = conic.evaluate(p);
            const ChordResult c = chord(e, generate_ray(g, v, i, j));
            if (val < -1e-9) {
              CHECK(c.hit);
            }
            if (val > 1e-9) {
              CHECK_FALSE(c.hit);
            }
            if (c.hit) {
              CHECK(box.contains(p, 1e-9));
            }
          }
        }
      }
    }
  }

  TEST_CASE("silhouette of an ellipsoid around the source is degenerate") {
    ConeBeamGeometry g = xfield::testing::small_geometry(8, 1);
    const Ellipsoid e = sphere(g.pose(0).source, 0.5);
    CHECK_THROWS_AS(project_silhouette(e, g, 0), DegenerateProjection);
  }

  TEST_CASE("circle silhouette gives coordinate axes and equal OBB and AABB tiles") {
    ConeBeamGeometry g = xfield::testing::small_geometry(32, 1);
    g.angles = {0.0};
    const Ellipsoid e = sphere(Vec3::Zero(), 0.4);
    const OrientedBox2D box = obb_of_conic(project_silhouette(e, g, 0));
    CHECK(std::abs(box.axis0.x()) == doctest::Approx(1.0));
    CHECK(std::abs(box.axis1.y()) == doctest::Approx(1.0));
    CHECK(box.half_extents.x() == doctest::Approx(box.half_extents.y()).epsilon(1e-12));
    const TileGrid grid = g.tile_grid(4);
    const auto a = tiles_overlapping(box, grid);
    const auto b = tiles_overlapping_aabb(ellipse_aabb(box), grid);
    CHECK(a == b);
  }

  TEST_CASE("OBB tiles are a subset of the AABB tiles") {
    Rng rng(4);
    const ConeBeamGeometry g = xfield::testing::small_geometry(64, 2);
    const TileGrid grid = g.tile_grid(8);
    for (int k = 0; k < 100; ++k) {
      Ellipsoid e = random_ellipsoid(rng);
      e.scale = Vec3(rng.uniform(0.05, 0.6), rng.uniform(0.02, 0.1), rng.uniform(0.02, 0.1));
      const OrientedBox2D box = obb_of_conic(project_silhouette(e, g, k % 2));
      const auto obb = tiles_overlapping(box, grid);
      const auto aabb = tiles_overlapping_aabb(ellipse_aabb(box), grid);
      CHECK(obb.size() <= aabb.size());
      for (std::size_t t : obb) CHECK(std::find(aabb.begin(), aabb.end(), t) != aabb.end());
    }
  }

  TEST_CASE("OBB area never exceeds the AABB area") {
    Rng rng(9);
    const ConeBeamGeometry g = xfield::testing::small_geometry(32, 1);
    for (int k = 0; k < 100; ++k) {
      const Ellipsoid e = random_ellipsoid(rng);
      const OrientedBox2D box = obb_of_conic(project_silhouette(e, g, 0));
      const AxisBox2D ab = ellipse_aabb(box);
      const double aabb_area = (ab.hi - ab.lo).prod();
      CHECK(box.area() <= aabb_area * (1.0 + 1e-12));
    }
  }
}
