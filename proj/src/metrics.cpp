#include "xfield/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "xfield/error.hpp"

namespace xfield {

namespace {

void check_same(const ImageView& a, const ImageView& b, const char* what) {
  if (a.width != b.width || a.height != b.height ||
      a.values.size() != static_cast<std::size_t>(a.width) * a.height ||
      b.values.size() != a.values.size()) {
    throw DimensionMismatch(std::string(what) + ": raster dimensions differ");
  }
}

double resolve_range(std::span<const double> ref, double data_range) {
  if (data_range > 0.0) return data_range;
  double m = ref.empty() ? 0.0 : *std::max_element(ref.begin(), ref.end());
  if (!(m > 0.0)) throw InvalidParameter("metric data range must be positive (reference max <= 0)");
  return m;
}

std::vector<double> gaussian_kernel(int window, double sigma) {
  std::vector<double> k(window);
  const int r = window / 2;
  double s = 0.0;
  for (int i = 0; i < window; ++i) {
    const double x = i - r;
    k[i] = std::exp(-0.5 * x * x / (sigma * sigma));
    s += k[i];
  }
  for (double& v : k) v /= s;
  return k;
}

// Valid-mode separable correlation: out is (w - n + 1) x (h - n + 1).
std::vector<double> filter_valid(std::span<const double> in, int w, int h,
                                 const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int t = 0; t < n; ++t) s += k[t] * in[static_cast<std::size_t>(y) * w + x + t];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int t = 0; t < n; ++t) s += k[t] * tmp[static_cast<std::size_t>(y + t) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  return out;
}

// Adjoint of filter_valid: scatters an (ow x oh) map back onto w x h.
std::vector<double> filter_valid_adjoint(std::span<const double> g, int w, int h,
                                         const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h, 0.0);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      const double v = g[static_cast<std::size_t>(y) * ow + x];
      for (int t = 0; t < n; ++t) tmp[static_cast<std::size_t>(y + t) * ow + x] += k[t] * v;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(w) * h, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      const double v = tmp[static_cast<std::size_t>(y) * ow + x];
      for (int t = 0; t < n; ++t) out[static_cast<std::size_t>(y) * w + x + t] += k[t] * v;
    }
  }
  return out;
}

double ssim_impl(ImageView x, ImageView y, double data_range, const SsimOptions& opt,
                 std::span<double> grad) {
  check_same(x, y, "ssim");
  if (opt.window < 1 || opt.window % 2 == 0) throw InvalidParameter("ssim: window must be odd");
  if (x.width < opt.window || x.height < opt.window) {
    throw DimensionMismatch("ssim: image smaller than the window");
  }
  if (!(data_range > 0.0)) throw InvalidParameter("ssim: data_range must be positive");
  const auto k = gaussian_kernel(opt.window, opt.gaussian_sigma);
  const int w = x.width, h = x.height;
  const std::size_t n = x.values.size();
  std::vector<double> xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x.values[i] * x.values[i];
    yy[i] = y.values[i] * y.values[i];
    xy[i] = x.values[i] * y.values[i];
  }
  const auto mx = filter_valid(x.values, w, h, k);
  const auto my = filter_valid(y.values, w, h, k);
  const auto exx = filter_valid(xx, w, h, k);
  const auto eyy = filter_valid(yy, w, h, k);
  const auto exy = filter_valid(xy, w, h, k);
  const double c1 = (opt.k1 * data_range) * (opt.k1 * data_range);
  const double c2 = (opt.k2 * data_range) * (opt.k2 * data_range);
  const std::size_t m = mx.size();
  const double inv_m = 1.0 / static_cast<double>(m);

  std::vector<double> ga, gb, gc;
  if (!grad.empty()) {
    ga.resize(m);
    gb.resize(m);
    gc.resize(m);
  }
  double total = 0.0;
  for (std::size_t p = 0; p < m; ++p) {
    const double ux = mx[p], uy = my[p];
    const double num1 = 2.0 * ux * uy + c1;
    const double num2 = 2.0 * (exy[p] - ux * uy) + c2;
    const double den1 = ux * ux + uy * uy + c1;
    const double den2 = (exx[p] - ux * ux) + (eyy[p] - uy * uy) + c2;
    const double s = (num1 * num2) / (den1 * den2);
    total += s;
    if (!grad.empty()) {
      // Grouped so that x == y gives an exact zero.
      ga[p] = inv_m * s *
              ((2.0 * uy / num1 - 2.0 * ux / den1) + (2.0 * ux / den2 - 2.0 * uy / num2));
      gb[p] = -inv_m * s / den2;
      gc[p] = inv_m * 2.0 * s / num2;
    }
  }
  if (!grad.empty()) {
    if (grad.size() != n) throw DimensionMismatch("ssim_gradient: output size mismatch");
    const auto a = filter_valid_adjoint(ga, w, h, k);
    const auto b = filter_valid_adjoint(gb, w, h, k);
    const auto c = filter_valid_adjoint(gc, w, h, k);
    for (std::size_t i = 0; i < n; ++i) {
      grad[i] = a[i] + 2.0 * x.values[i] * b[i] + y.values[i] * c[i];
    }
  }
  return total * inv_m;
}

}  // namespace

double psnr(ImageView pred, ImageView ref, double data_range) {
  check_same(pred, ref, "psnr");
  const double range = resolve_range(ref.values, data_range);
  double se = 0.0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const double d = pred.values[i] - ref.values[i];
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = se / static_cast<double>(pred.values.size());
  return 10.0 * std::log10(range * range / mse);
}

double psnr(const DetectorImage& pred, const DetectorImage& ref, double data_range) {
  return psnr(view_of(pred), view_of(ref), data_range);
}

double ssim(ImageView x, ImageView y, double data_range, const SsimOptions& opt) {
  return ssim_impl(x, y, data_range, opt, {});
}

double ssim(const DetectorImage& x, const DetectorImage& y, double data_range,
            const SsimOptions& opt) {
  return ssim(view_of(x), view_of(y), resolve_range(y.values, data_range), opt);
}

double ssim_gradient(ImageView x, ImageView y, double data_range, std::span<double> grad_x,
                     const SsimOptions& opt) {
  if (grad_x.empty()) throw DimensionMismatch("ssim_gradient: empty gradient buffer");
  return ssim_impl(x, y, data_range, opt, grad_x);
}

std::string format_db(double db) {
  if (psnr_infinite(db)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", db);
  return buf;
}

double MetricReport::mean_psnr() const {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  std::size_t finite = 0;
  for (const auto& r : rows) {
    if (psnr_infinite(r.psnr)) continue;
    s += r.psnr;
    ++finite;
  }
  if (finite == 0) return std::numeric_limits<double>::infinity();
  return s / static_cast<double>(finite);
}

double MetricReport::mean_ssim() const {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.ssim;
  return s / static_cast<double>(rows.size());
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  char buf[64];
  os << "name,psnr_db,ssim,lpips\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.8f", r.ssim);
    os << r.name << ',' << format_db(r.psnr) << ',' << buf << ",unavailable\n";
  }
  std::snprintf(buf, sizeof buf, "%.8f", mean_ssim());
  os << "mean," << format_db(mean_psnr()) << ',' << buf << ",unavailable\n";
  return os.str();
}

std::string MetricReport::to_table() const {
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-16s %12s %10s %12s\n", "name", "PSNR [dB]", "SSIM", "LPIPS");
  os << buf;
  auto line = [&](const std::string& name, double p, double s) {
    std::snprintf(buf, sizeof buf, "%-16s %12s %10.4f %12s\n", name.c_str(), format_db(p).c_str(),
                  s, "unavailable");
    os << buf;
  };
  for (const auto& r : rows) line(r.name, r.psnr, r.ssim);
  line("mean", mean_psnr(), mean_ssim());
  return os.str();
}

MetricReport stack_metrics(const ProjectionStack& pred, const ProjectionStack& ref,
                           double data_range) {
  if (pred.views.size() != ref.views.size()) {
    throw DimensionMismatch("stack_metrics: view counts differ");
  }
  if (ref.views.empty()) throw InvalidParameter("stack_metrics: empty stacks");
  double range = data_range;
  if (!(range > 0.0)) {
    range = 0.0;
    for (const auto& v : ref.views) {
      for (double x : v.values) range = std::max(range, x);
    }
    if (!(range > 0.0)) throw InvalidParameter("metric data range must be positive");
  }
  MetricReport rep;
  rep.data_range = range;
  for (std::size_t v = 0; v < ref.views.size(); ++v) {
    char name[32];
    std::snprintf(name, sizeof name, "view_%04zu", v);
    rep.rows.push_back({name, psnr(pred.views[v], ref.views[v], range),
                        ssim(view_of(pred.views[v]), view_of(ref.views[v]), range)});
  }
  return rep;
}

MetricReport VolumeMetrics::report() const {
  MetricReport rep;
  rep.data_range = data_range;
  rep.rows.push_back({"volume", psnr, mean_slice_ssim});
  return rep;
}

VolumeMetrics volume_metrics(const VoxelVolume& pred, const VoxelVolume& ref, double data_range) {
  if (!pred.grid.same_shape(ref.grid) || pred.values.size() != ref.values.size()) {
    throw DimensionMismatch("volume_metrics: volume dimensions differ");
  }
  const auto& d = ref.grid.dims;
  VolumeMetrics out;
  out.data_range = resolve_range(ref.values, data_range);
  out.psnr = psnr(ImageView{pred.values, static_cast<int>(pred.values.size()), 1},
                  ImageView{ref.values, static_cast<int>(ref.values.size()), 1}, out.data_range);
  const std::size_t slice = static_cast<std::size_t>(d[0]) * d[1];
  double s = 0.0;
  for (int z = 0; z < d[2]; ++z) {
    const std::span<const double> a(pred.values.data() + z * slice, slice);
    const std::span<const double> b(ref.values.data() + z * slice, slice);
    const double v = ssim(ImageView{a, d[0], d[1]}, ImageView{b, d[0], d[1]}, out.data_range);
    out.slice_ssim.push_back(v);
    s += v;
  }
  out.mean_slice_ssim = s / d[2];
  return out;
}

}  // namespace xfield
