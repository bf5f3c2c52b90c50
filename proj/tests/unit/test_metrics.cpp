#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracle_images.hpp"
#include "xfield/error.hpp"
#include "xfield/metrics.hpp"
#include "xfield/rng.hpp"

using namespace xfield;

namespace {

DetectorImage random_image(Rng& rng, int w, int h, double scale = 1.0) {
  DetectorImage img(w, h);
  for (auto& v : img.values) v = scale * rng.uniform();
  return img;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("psnr basics") {
    Rng rng(91);
    const DetectorImage a = random_image(rng, 20, 16);
    CHECK(psnr_infinite(psnr(a, a)));
    DetectorImage b = a;
    for (auto& v : b.values) v += 0.1;
    CHECK(psnr(b, a, 1.0) == doctest::Approx(20.0).epsilon(1e-12));
    const DetectorImage c = random_image(rng, 20, 16);
    CHECK(psnr(a, c, 1.0) == psnr(c, a, 1.0));
    CHECK_THROWS_AS(psnr(a, random_image(rng, 19, 16), 1.0), DimensionMismatch);
  }

  TEST_CASE("ssim matches the frozen reference values") {
    for (int p = 0; p < static_cast<int>(xfield::testing::kOracleSsim.size()); ++p) {
      const auto pair = xfield::testing::oracle_pair(p);
      const double s = ssim(view_of(pair.a), view_of(pair.b), pair.range);
      CHECK(s == doctest::Approx(xfield::testing::kOracleSsim[p]).epsilon(1e-10));
    }
  }

  TEST_CASE("ssim identity, symmetry and bound") {
    Rng rng(93);
    for (int k = 0; k < 10; ++k) {
      const DetectorImage a = random_image(rng, 24, 24);
      const DetectorImage b = random_image(rng, 24, 24);
      CHECK(ssim(a, a, 1.0) == doctest::Approx(1.0).epsilon(1e-15));
      CHECK(ssim(a, b, 1.0) == ssim(b, a, 1.0));
      CHECK(ssim(a, b, 1.0) < 1.0);
    }
    const DetectorImage small(8, 8);
    CHECK_THROWS(ssim(small, small, 1.0));
  }

  TEST_CASE("joint constant offset leaves the metrics unchanged") {
    Rng rng(95);
    const DetectorImage a = random_image(rng, 30, 30, 0.5);
    const DetectorImage b = random_image(rng, 30, 30, 0.5);
    DetectorImage a2 = a, b2 = b;
    for (auto& v : a2.values) v += 0.25;
    for (auto& v : b2.values) v += 0.25;
    CHECK(psnr(a2, b2, 1.0) == doctest::Approx(psnr(a, b, 1.0)).epsilon(1e-12));
    CHECK(ssim(a2, a2, 1.0) == doctest::Approx(1.0).epsilon(1e-15));
    // The luminance term depends on the local means themselves, so the SSIM
    // shift is second order in the local mean difference. Near-identical
    // pairs stay within 1e-6; independent pairs do not.
    DetectorImage c = a, c2 = a2;
    for (std::size_t p = 0; p < c.size(); ++p) {
      const double n = 1e-3 * (rng.uniform() - 0.5);
      c.values[p] += n;
      c2.values[p] += n;
    }
    CHECK(std::abs(ssim(c2, a2, 1.0) - ssim(c, a, 1.0)) < 1e-6);
    const double shift = std::abs(ssim(a2, b2, 1.0) - ssim(a, b, 1.0));
    MESSAGE("independent pair SSIM shift under offset: " << shift);
    CHECK(shift < 1e-2);
  }

  TEST_CASE("ssim gradient matches finite differences") {
    Rng rng(97);
    const DetectorImage x = random_image(rng, 16, 14);
    const DetectorImage y = random_image(rng, 16, 14);
    std::vector<double> grad(x.size());
    const double s = ssim_gradient(view_of(x), view_of(y), 1.0, grad);
    CHECK(s == ssim(x, y, 1.0));
    for (std::size_t p = 0; p < x.size(); p += 7) {
      const double h = 1e-6;
      DetectorImage xp = x, xm = x;
      xp.values[p] += h;
      xm.values[p] -= h;
      const double fd = (ssim(xp, y, 1.0) - ssim(xm, y, 1.0)) / (2 * h);
      CHECK(grad[p] == doctest::Approx(fd).epsilon(1e-5).scale(1e-3));
    }
    std::vector<double> zero(x.size());
    ssim_gradient(view_of(x), view_of(x), 1.0, zero);
    for (double g : zero) CHECK(g == 0.0);
  }

  TEST_CASE("volume metrics") {
    VoxelVolume a(VolumeGrid::cube(12, 1.0));
    Rng rng(99);
    for (auto& v : a.values) v = rng.uniform();
    VolumeMetrics m = volume_metrics(a, a);
    CHECK(psnr_infinite(m.psnr));
    CHECK(m.mean_slice_ssim == doctest::Approx(1.0));
    const VoxelVolume zeros(a.grid, 0.0), ones(a.grid, 1.0);
    CHECK(volume_metrics(zeros, ones, 1.0).psnr == doctest::Approx(0.0).scale(1.0));

    VoxelVolume b(a.grid);
    for (auto& v : b.values) v = rng.uniform();
    m = volume_metrics(b, a);
    const int n = 12;
    double slice_sum = 0.0;
    for (int k = 0; k < n; ++k) {
      const std::span<const double> sa(a.values.data() + k * n * n, n * n);
      const std::span<const double> sb(b.values.data() + k * n * n, n * n);
      const double s = ssim(ImageView{sb, n, n}, ImageView{sa, n, n}, m.data_range);
      CHECK(m.slice_ssim[k] == doctest::Approx(s).epsilon(1e-14));
      slice_sum += s;
    }
    CHECK(m.mean_slice_ssim == doctest::Approx(slice_sum / n));
    CHECK(m.psnr == doctest::Approx(psnr(ImageView{b.values, n * n, n}, ImageView{a.values, n * n, n},
                                         m.data_range)));
    CHECK_THROWS_AS(volume_metrics(VoxelVolume(VolumeGrid::cube(10, 1.0)), a), DimensionMismatch);
  }

  TEST_CASE("stack report lists every view and labels lpips") {
    Rng rng(101);
    ProjectionStack a, b;
    for (int v = 0; v < 3; ++v) {
      a.views.push_back(random_image(rng, 16, 16));
      b.views.push_back(random_image(rng, 16, 16));
    }
    a.geometry.angles = b.geometry.angles = {0.0, 1.0, 2.0};
    const MetricReport r = stack_metrics(a, b);
    CHECK(r.rows.size() == 3);
    CHECK(r.to_csv().find("unavailable") != std::string::npos);
    CHECK(std::isfinite(r.mean_psnr()));
    const MetricReport same = stack_metrics(a, a);
    CHECK(psnr_infinite(same.mean_psnr()));
    CHECK(same.mean_ssim() == doctest::Approx(1.0));
  }
}
