#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "scenes.hpp"
#include "xfield/error.hpp"
#include "xfield/phantom.hpp"
#include "xfield/recon.hpp"

using namespace xfield;

namespace {

double occupied_mass(const VoxelVolume& v) {
  double s = 0.0;
  for (double x : v.values) s += x;
  return s * v.grid.spacing.prod();
}

double rmse(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

std::vector<double> voxel_render(const VoxelVolume& v, const ConeBeamGeometry& g) {
  const VoxelProjector op(g, v.grid);
  std::vector<double> y(op.rows());
  op.apply(v.values, y);
  return y;
}

}  // namespace

TEST_SUITE("phantom") {
  TEST_CASE("presets satisfy their construction") {
    for (const auto& name : preset_names()) {
      const PhantomSpec s = make_phantom(name, 1);
      CHECK_NOTHROW(s.validate());
      for (const auto& e : s.scene) {
        CHECK_NOTHROW(e.validate());
        // axis-aligned half extent of a rotated ellipsoid
        const Mat3 rs = rotation_matrix(e.rotation) * e.scale.asDiagonal();
        const Vec3 half = rs.rowwise().norm();
        CHECK((e.center.cwiseAbs() + half).maxCoeff() <= 0.85 + 1e-12);
      }
    }
    const PhantomSpec shells = make_phantom(Preset::nested_shells, 0);
    std::set<double> sig;
    for (const auto& e : shells.scene) sig.insert(e.sigma);
    CHECK(sig.size() >= 3);

    const PhantomSpec pair = make_phantom(Preset::overlap_pair, 0);
    REQUIRE(pair.scene.size() == 2);
    CHECK(pair.scene[0].sigma != pair.scene[1].sigma);
    const ConeBeamGeometry g = xfield::testing::small_geometry(33, 4);
    for (std::size_t v = 0; v < g.views(); ++v) {
      const Ray r = generate_ray(g, v, 16, 16);
      const ChordResult a = chord(pair.scene[0], r), b = chord(pair.scene[1], r);
      REQUIRE(a.hit);
      REQUIRE(b.hit);
      CHECK(std::min(a.exit(), b.exit()) - std::max(a.entry(), b.entry()) > 0.0);
    }
    CHECK_THROWS_AS(make_phantom("checkerboard", 0), ConfigError);
  }

  TEST_CASE("random-k is deterministic and disjoint") {
    const PhantomSpec a = make_phantom(Preset::random_k, 42, 12);
    const PhantomSpec b = make_phantom(Preset::random_k, 42, 12);
    REQUIRE(a.scene.size() == 12);
    for (std::size_t i = 0; i < a.scene.size(); ++i) {
      CHECK(a.scene[i].center == b.scene[i].center);
      CHECK(a.scene[i].sigma == b.scene[i].sigma);
      for (std::size_t j = 0; j < i; ++j) {
        CHECK((a.scene[i].center - a.scene[j].center).norm() >
              a.scene[i].scale.maxCoeff() + a.scene[j].scale.maxCoeff());
      }
    }
    CHECK(make_phantom(Preset::random_k, 43, 12).scene[0].center != a.scene[0].center);
  }

  TEST_CASE("sphere occupies pi/6 of its bounding cube") {
    Ellipsoid e;
    e.scale = Vec3::Constant(1.0);
    e.sigma = 1.0;
    const VoxelVolume v = voxelize({e}, VolumeGrid::cube(64, 1.0));
    double occupied = 0.0;
    for (double x : v.values) occupied += x;
    const double fraction = occupied / static_cast<double>(v.values.size());
    CHECK(std::abs(fraction - std::numbers::pi / 6.0) < 0.05 * std::numbers::pi / 6.0);
    CHECK(v.at(0, 0, 0) == 0.0);
  }

  TEST_CASE("voxelization converges with resolution") {
    for (Preset p : {Preset::two_material_slab, Preset::nested_shells, Preset::random_k}) {
      const PhantomSpec s = make_phantom(p, 2);
      const double m32 = occupied_mass(voxelize(s.scene, VolumeGrid::cube(32, 1.0)));
      const double m64 = occupied_mass(voxelize(s.scene, VolumeGrid::cube(64, 1.0)));
      CHECK(std::abs(m32 - m64) < 0.02 * m64);
    }
  }

  TEST_CASE("smallest index wins inside overlaps") {
    const PhantomSpec pair = make_phantom(Preset::overlap_pair, 0);
    const VoxelVolume v = voxelize(pair);
    CHECK(v.grid.dims[0] == pair.dims);
    const Vec3 c = v.grid.voxel_center(32, 32, 32);
    CHECK(v.at(32, 32, 32) == pair.scene[0].sigma);
    (void)c;
  }

  TEST_CASE("analytic and voxel renders agree within the discretisation trend") {
    const PhantomSpec s = make_phantom(Preset::random_k, 8, 10);
    const ConeBeamGeometry g = xfield::testing::small_geometry(24, 3);
    const ProjectionStack analytic = render_stack(s.scene, g);
    const std::vector<double> ref = flatten(analytic);
    const std::vector<double> r32 = voxel_render(voxelize(s.scene, VolumeGrid::cube(32, 1.0)), g);
    const std::vector<double> r64 = voxel_render(voxelize(s.scene, VolumeGrid::cube(64, 1.0)), g);
    const double e32 = rmse(r32, ref), e64 = rmse(r64, ref);
    MESSAGE("rmse 32^3 " << e32 << " 64^3 " << e64);
    CHECK(e64 < e32);
    CHECK(e64 < 2.0 * rmse(r32, r64));
  }

  TEST_CASE("spec validation") {
    PhantomSpec s;
    CHECK_THROWS_AS(s.validate(), InvalidParameter);
    s = make_phantom(Preset::random_k, 0, 3);
    s.dims = 4;
    CHECK_THROWS_AS(s.validate(), InvalidParameter);
  }
}
