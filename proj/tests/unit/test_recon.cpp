#include <doctest.h>

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "scenes.hpp"
#include "xfield/error.hpp"
#include "xfield/metrics.hpp"
#include "xfield/phantom.hpp"
#include "xfield/recon.hpp"

using namespace xfield;
using xfield::testing::small_geometry;

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return static_cast<double>(s);
}

std::vector<double> gaussian(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

ProjectionStack project_volume(const VoxelVolume& vol, const ConeBeamGeometry& g) {
  const VoxelProjector op(g, vol.grid);
  std::vector<double> y(op.rows());
  op.apply(vol.values, y);
  ProjectionStack s;
  s.geometry = g;
  for (std::size_t v = 0; v < g.views(); ++v) {
    DetectorImage img(g.width, g.height);
    std::copy_n(y.begin() + static_cast<std::ptrdiff_t>(v * g.pixels()), g.pixels(),
                img.values.begin());
    s.views.push_back(std::move(img));
  }
  return s;
}

VoxelVolume noisy_cube(int n, std::uint64_t seed) {
  VoxelVolume v(VolumeGrid::cube(n, 1.0));
  Rng rng(seed);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        const bool inside = i > n / 4 && i < 3 * n / 4 && j > n / 4 && j < 3 * n / 4 &&
                            k > n / 4 && k < 3 * n / 4;
        double x = inside ? 1.0 : 0.0;
        const double u = rng.uniform();
        if (u < 0.05) x = 0.0;
        if (u > 0.95) x = 1.0;
        v.at(i, j, k) = x;
      }
  return v;
}

}  // namespace

TEST_SUITE("recon") {
  TEST_CASE("adjoint passes the dot-product test") {
    Rng rng(51);
    ConeBeamGeometry g = small_geometry(12, 3);
    g.detector_u = 3.0;
    g.detector_v = 2.5;
    VolumeGrid grid = VolumeGrid::cube(9, 0.8);
    grid.dims = {9, 7, 8};
    const VoxelProjector op(g, grid);
    for (int trial = 0; trial < 20; ++trial) {
      const std::vector<double> x = gaussian(rng, op.cols());
      const std::vector<double> y = gaussian(rng, op.rows());
      std::vector<double> ax(op.rows()), aty(op.cols());
      op.apply(x, ax);
      op.adjoint(y, aty);
      const double lhs = dot(ax, y), rhs = dot(x, aty);
      CHECK(std::abs(lhs - rhs) <= 1e-10 * (std::abs(lhs) + std::abs(rhs)) + 1e-12);
    }
  }

  TEST_CASE("central ray through a uniform cube integrates the side length") {
    ConeBeamGeometry g = small_geometry(33, 2);
    g.angles = {0.0, 0.3};
    const VoxelVolume cube(VolumeGrid::cube(16, 0.5), 1.0);
    const VoxelProjector op(g, cube.grid);
    std::vector<double> y(op.rows());
    op.apply(cube.values, y);
    // angle 0 ray crosses the cube face to face
    CHECK(y[16 * 33 + 16] == doctest::Approx(1.0).epsilon(0.01));
    // oblique in-plane ray: 1 / cos(0.3)
    CHECK(y[g.pixels() + 16 * 33 + 16] == doctest::Approx(1.0 / std::cos(0.3)).epsilon(0.01));
    CHECK(op.step() <= 0.5 * cube.grid.spacing.minCoeff());
  }

  TEST_CASE("zero volume projects to zero") {
    const VoxelVolume zero(VolumeGrid::cube(8, 1.0));
    const ProjectionStack s = project_volume(zero, small_geometry(10, 2));
    for (const auto& v : s.views)
      for (double x : v.values) CHECK(x == 0.0);
  }

  TEST_CASE("cgls on a single unit weight") {
    const DenseOperator op(1, 1, {1.0});
    const std::vector<double> b{0.7}, x0{0.0};
    const CglsResult r = cgls(op, b, 1, x0);
    CHECK(r.x[0] == doctest::Approx(0.7).epsilon(1e-15));
  }

  TEST_CASE("cgls matches a dense least-squares solve") {
    Rng rng(53);
    for (auto [m, n] : {std::pair{30, 20}, std::pair{120, 80}, std::pair{250, 200}}) {
      Eigen::MatrixXd a(m, n);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
      Eigen::VectorXd b(m);
      for (int i = 0; i < m; ++i) b(i) = rng.normal();
      const Eigen::VectorXd ref = a.colPivHouseholderQr().solve(b);
      std::vector<double> values(static_cast<std::size_t>(m) * n);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) values[static_cast<std::size_t>(i) * n + j] = a(i, j);
      const DenseOperator op(m, n, values, 3);
      const std::vector<double> bv(b.data(), b.data() + m), x0(n, 0.0);
      const CglsResult r = cgls(op, bv, 2 * n, x0);
      double err = 0.0;
      for (int j = 0; j < n; ++j) err = std::max(err, std::abs(r.x[j] - ref(j)));
      CHECK(err < 1e-6);
      for (std::size_t k = 1; k < r.residual_norms.size(); ++k) {
        CHECK(r.residual_norms[k] <= r.residual_norms[k - 1] * (1.0 + 1e-10));
      }
    }
  }

  TEST_CASE("cgls residual is non-increasing on a tomographic system") {
    const PhantomSpec spec = make_phantom(Preset::random_k, 3, 6);
    const VoxelVolume truth = voxelize(spec.scene, VolumeGrid::cube(12, 1.0));
    const ConeBeamGeometry g = small_geometry(16, 6);
    const ProjectionStack s = project_volume(truth, g);
    const VoxelProjector op(g, truth.grid);
    const std::vector<double> x0(op.cols(), 0.0);
    const CglsResult r = cgls(op, flatten(s), 25, x0);
    REQUIRE(r.residual_norms.size() >= 2);
    for (std::size_t k = 1; k < r.residual_norms.size(); ++k) {
      CHECK(r.residual_norms[k] <= r.residual_norms[k - 1] * (1.0 + 1e-10));
    }
  }

  TEST_CASE("cgls of zero data is zero") {
    const VoxelVolume zero(VolumeGrid::cube(8, 1.0));
    const ProjectionStack s = project_volume(zero, small_geometry(10, 3));
    const VoxelVolume out = cgls(s, 5, zero);
    for (double x : out.values) CHECK(x == 0.0);
  }

  TEST_CASE("sart on a single unit weight") {
    const DenseOperator op(1, 1, {1.0});
    const std::vector<double> b{0.42}, x0{0.0};
    CHECK(sart(op, b, 1, 1.0, x0).x[0] == doctest::Approx(0.42).epsilon(1e-15));
    CHECK_THROWS_AS(sart(op, b, 1, 0.0, x0), InvalidParameter);
    CHECK_THROWS_AS(sart(op, b, 1, 2.0, x0), InvalidParameter);
  }

  TEST_CASE("sart residual decreases on a consistent phantom") {
    const PhantomSpec spec = make_phantom(Preset::random_k, 5, 4);
    const VoxelVolume truth = voxelize(spec.scene, VolumeGrid::cube(8, 1.0));
    const ConeBeamGeometry g = small_geometry(12, 60);
    const ProjectionStack s = project_volume(truth, g);
    const VoxelProjector op(g, truth.grid);
    const std::vector<double> x0(op.cols(), 0.0);
    const SartResult r = sart(op, flatten(s), 10, 1.0, x0);
    REQUIRE(r.residual_norms.size() == 10);
    for (std::size_t k = 1; k < r.residual_norms.size(); ++k) {
      CHECK(r.residual_norms[k] < r.residual_norms[k - 1]);
    }
    for (double x : r.x) CHECK(x >= 0.0);
  }

  TEST_CASE("sart output is non-negative on inconsistent data") {
    Rng rng(59);
    const ConeBeamGeometry g = small_geometry(10, 4);
    const VolumeGrid grid = VolumeGrid::cube(8, 1.0);
    const VoxelProjector op(g, grid);
    std::vector<double> b = gaussian(rng, op.rows());
    const std::vector<double> x0(op.cols(), 0.0);
    for (double x : sart(op, b, 3, 1.5, x0).x) CHECK(x >= 0.0);
  }

  TEST_CASE("tv denoising") {
    const VoxelVolume flat(VolumeGrid::cube(8, 1.0), 0.3);
    CHECK(tv_denoise(flat, 10, 0.01).values == flat.values);
    const VoxelVolume noisy = noisy_cube(16, 61);
    CHECK(tv_denoise(noisy, 0, 0.01).values == noisy.values);
    const double before = total_variation(noisy);
    double prev = before;
    for (int steps : {1, 5, 20}) {
      const double after = total_variation(tv_denoise(noisy, steps, 0.01));
      CHECK(after < before);
      CHECK(after <= prev);
      prev = after;
    }
    CHECK_THROWS_AS(tv_denoise(noisy, 1, 0.0), InvalidParameter);
  }

  TEST_CASE("degenerate hybrid schedule is plain cgls") {
    const PhantomSpec spec = make_phantom(Preset::random_k, 7, 5);
    const VolumeGrid grid = VolumeGrid::cube(12, 1.0);
    const ProjectionStack s = project_volume(voxelize(spec.scene, grid), small_geometry(16, 5));
    HybridSchedule sched;
    sched.cgls_iterations = 7;
    sched.sart_sweeps = 0;
    sched.tv_steps = 0;
    const VoxelVolume a = hybrid_init(s, sched, grid);
    VoxelVolume b = cgls(s, 7, VoxelVolume(grid));
    CHECK(a.values == b.values);
    ProjectionStack empty;
    empty.geometry = s.geometry;
    empty.geometry.angles.clear();
    CHECK_THROWS(hybrid_init(empty, sched, grid));
  }

  TEST_CASE("full hybrid schedule beats cgls alone") {
    const PhantomSpec spec = make_phantom(Preset::random_k, 9, 16);
    const VolumeGrid grid = VolumeGrid::cube(24, 1.0);
    const VoxelVolume truth = voxelize(spec.scene, grid);
    const ProjectionStack s = project_volume(truth, small_geometry(32, 10));
    HybridSchedule sched;
    const VoxelVolume full = hybrid_init(s, sched, grid);
    const VoxelVolume only = cgls(s, sched.cgls_iterations, VoxelVolume(grid));
    const double p_full = volume_metrics(full, truth).psnr;
    const double p_cgls = volume_metrics(only, truth).psnr;
    MESSAGE("hybrid " << p_full << " dB, cgls " << p_cgls << " dB");
    CHECK(p_full >= p_cgls);
    for (double x : full.values) CHECK(x >= 0.0);
  }

  TEST_CASE("recon_ct contract") {
    const PhantomSpec spec = make_phantom(Preset::random_k, 11, 4);
    const VolumeGrid grid = VolumeGrid::cube(10, 1.0);
    const ProjectionStack dense = render_stack(spec.scene, small_geometry(16, 100));
    for (ReconMethod m : {ReconMethod::sart, ReconMethod::cgls_tv}) {
      ReconOptions o;
      o.sart_sweeps = 3;
      o.cgls_iterations = 5;
      o.tv_steps = 2;
      const VoxelVolume v = recon_ct(dense, m, grid, o);
      for (double x : v.values) {
        CHECK(std::isfinite(x));
        CHECK(x >= 0.0);
      }
    }
    ProjectionStack one = dense;
    one.views.resize(1);
    one.geometry.angles.resize(1);
    CHECK_THROWS(recon_ct(one, ReconMethod::sart, grid));
    CHECK(parse_recon_method("cgls+tv") == ReconMethod::cgls_tv);
    CHECK_THROWS_AS(parse_recon_method("fbp"), ConfigError);
  }
}
