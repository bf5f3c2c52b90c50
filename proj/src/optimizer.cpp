#include "xfield/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "xfield/error.hpp"
#include "xfield/knn.hpp"
#include "xfield/metrics.hpp"
#include "xfield/parallel.hpp"
#include "xfield/rng.hpp"

namespace xfield {

namespace {

// Row partition for gradient accumulation. Fixed so the reduction order does
// not depend on the worker count.
constexpr std::size_t kGradChunks = 8;

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-15;

struct Accum {
  double sigma = 0.0;
  double center[3] = {0.0, 0.0, 0.0};
  double g[6] = {0, 0, 0, 0, 0, 0};  // symmetric dL/dM: xx xy xz yy yz zz
  bool touched = false;
};

std::array<Mat3, 4> rotation_partials(double w, double x, double y, double z) {
  std::array<Mat3, 4> d;
  d[0] << 0, -z, y, z, 0, -x, -y, x, 0;
  d[1] << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
  d[2] << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
  d[3] << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
  for (auto& m : d) m *= 2.0;
  return d;
}

double data_range_of(const DetectorImage& target) {
  double m = 0.0;
  for (double v : target.values) m = std::max(m, v);
  return m > 0.0 ? m : 1.0;
}

void check_dims(const DetectorImage& a, const DetectorImage& b) {
  if (a.width != b.width || a.height != b.height || a.size() != b.size()) {
    throw DimensionMismatch("loss: rendered and target rasters differ");
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lambda_dssim >= 0.0 && lambda_dssim <= 1.0)) {
    throw InvalidParameter("train: lambda_dssim must lie in [0, 1]");
  }
  if (!(lr_position > 0.0 && lr_sigma > 0.0 && lr_scale > 0.0 && lr_rotation > 0.0 &&
        lr_position_final > 0.0)) {
    throw InvalidParameter("train: learning rates must be > 0");
  }
  if (iterations < 0) throw InvalidParameter("train: iterations must be >= 0");
  if (densify_interval < 0 || material_interval < 0) {
    throw InvalidParameter("train: densify intervals must be >= 0");
  }
  if (densify_interval > 0 && iterations > 0 &&
      !(densify_start < densify_end && densify_end <= iterations)) {
    throw InvalidParameter("train: need densify_start < densify_end <= iterations");
  }
  if (!(split_divisor > 1.0)) throw InvalidParameter("train: split_divisor must be > 1");
  if (max_ellipsoids < 1) throw InvalidParameter("train: max_ellipsoids must be >= 1");
  if (!(material_subset > 0.0 && material_subset <= 1.0)) {
    throw InvalidParameter("train: material_subset must lie in (0, 1]");
  }
  if (knn_k < 1) throw InvalidParameter("train: knn_k must be >= 1");
  if (!(prune_threshold >= 0.0) || !(grad_threshold >= 0.0) || !(clone_extent_fraction >= 0.0)) {
    throw InvalidParameter("train: thresholds must be >= 0");
  }
  if (checkpoint_interval < 0) throw InvalidParameter("train: checkpoint_interval must be >= 0");
}

void GradientRecord::reset(std::size_t n) {
  grads.assign(n, EllipsoidGrad{});
  screen_grad.assign(n, 0.0);
  visible.assign(n, 0);
  nonfinite = 0;
}

double loss(const DetectorImage& pred, const DetectorImage& target, double lambda_dssim) {
  check_dims(pred, target);
  if (!(lambda_dssim >= 0.0 && lambda_dssim <= 1.0)) {
    throw InvalidParameter("loss: lambda_dssim must lie in [0, 1]");
  }
  double l1 = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) l1 += std::abs(pred.values[k] - target.values[k]);
  l1 /= static_cast<double>(pred.size());
  double out = (1.0 - lambda_dssim) * l1;
  if (lambda_dssim > 0.0) {
    const double s = ssim(view_of(pred), view_of(target), data_range_of(target));
    out += lambda_dssim * 0.5 * (1.0 - s);
  }
  return out;
}

double loss_gradient(const DetectorImage& pred, const DetectorImage& target, double lambda_dssim,
                     std::vector<double>& grad) {
  check_dims(pred, target);
  if (!(lambda_dssim >= 0.0 && lambda_dssim <= 1.0)) {
    throw InvalidParameter("loss: lambda_dssim must lie in [0, 1]");
  }
  const std::size_t n = pred.size();
  grad.assign(n, 0.0);
  const double w1 = (1.0 - lambda_dssim) / static_cast<double>(n);
  double l1 = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double d = pred.values[k] - target.values[k];
    l1 += std::abs(d);
    grad[k] = d > 0.0 ? w1 : (d < 0.0 ? -w1 : 0.0);
  }
  double out = (1.0 - lambda_dssim) * l1 / static_cast<double>(n);
  if (lambda_dssim > 0.0) {
    std::vector<double> gs(n);
    const double s = ssim_gradient(view_of(pred), view_of(target), data_range_of(target), gs);
    out += lambda_dssim * 0.5 * (1.0 - s);
    const double c = -0.5 * lambda_dssim;
    for (std::size_t k = 0; k < n; ++k) grad[k] += c * gs[k];
  }
  return out;
}

namespace {

// Accumulates d/dsigma, d/dcenter and d/dM over the pixels of one view.
void accumulate_view(const Scene& scene, const PreparedView& pv, const ConeBeamGeometry& geometry,
                     std::span<const double> weight, const RenderOptions& options,
                     std::vector<Accum>& total) {
  const std::size_t n = scene.size();
  const auto h = static_cast<std::size_t>(geometry.height);
  const int w = geometry.width;
  const std::size_t chunks = std::min(kGradChunks, h);
  std::vector<std::vector<Accum>> part(chunks);
  const bool geometric = options.lengths != LengthMode::constant_one;

  parallel_for(chunks, [&](std::size_t c) {
    std::vector<Accum>& acc = part[c];
    acc.assign(n, Accum{});
    PreparedView::Workspace ws;
    SegmentList segs;
    std::vector<double> d_entry, d_exit;
    for (std::size_t row = h * c / chunks; row < h * (c + 1) / chunks; ++row) {
      const int j = static_cast<int>(row);
      for (int i = 0; i < w; ++i) {
        const double g = weight[row * w + i];
        if (g == 0.0) continue;
        pv.trace(i, j, ws, segs);
        if (segs.empty()) continue;
        d_entry.assign(segs.size(), 0.0);
        d_exit.assign(segs.size(), 0.0);
        for (std::size_t r = 0; r < segs.size(); ++r) {
          const SegmentRecord& rec = segs[r];
          Accum& a = acc[rec.ellipsoid];
          a.touched = true;
          a.sigma += g * rec.corrected;
          if (!geometric) continue;
          const double s = g * scene[rec.ellipsoid].sigma;
          d_entry[r] += s * rec.coeff[0];
          d_exit[r] += s * rec.coeff[1];
          if (rec.predecessor >= 0) {
            d_entry[rec.predecessor] += s * rec.coeff[2];
            d_exit[rec.predecessor] += s * rec.coeff[3];
          }
        }
        if (!geometric) continue;
        const Ray ray = pv.ray(i, j);
        const Vec3& d = ray.direction;
        for (std::size_t r = 0; r < segs.size(); ++r) {
          const double gd = d_entry[r] + d_exit[r];
          const double gl = 0.5 * (d_exit[r] - d_entry[r]);
          if (gd == 0.0 && gl == 0.0) continue;
          const int e = segs[r].ellipsoid;
          const Mat3& m = pv.inverse_covariance(static_cast<std::size_t>(e));
          const Vec3& center = scene[e].center;
          const double tc = (center - ray.origin).dot(d);
          const Vec3 av = ray.origin + tc * d - center;
          const Vec3 md = m * d;
          const Vec3 ma = m * av;
          const double A = d.dot(md);
          const double B = av.dot(md);
          const double C = av.dot(ma);
          const double rad = std::min(1.0 - (C - B * (B / A)), 1.0);
          if (!(rad > 0.0)) continue;
          const double sa = std::sqrt(A), sr = std::sqrt(rad);
          // length = 2 sqrt(rad / A), depth = tc - B / A
          const double dl_drad = 1.0 / (sa * sr);
          const double dl_dA = -B * B / (A * A) * dl_drad - sr / (A * sa);
          const double dl_dB = 2.0 * B / A * dl_drad;
          const double dl_dC = -dl_drad;
          const double gA = gl * dl_dA + gd * (B / (A * A));
          const double gB = gl * dl_dB - gd / A;
          const double gC = gl * dl_dC;
          Accum& acc_e = acc[e];
          // Anchor point held fixed: d a / d c = -I.
          const Vec3 gc = -(gB * md + 2.0 * gC * ma);
          acc_e.center[0] += gc.x();
          acc_e.center[1] += gc.y();
          acc_e.center[2] += gc.z();
          const double hb = 0.5 * gB;
          acc_e.g[0] += gA * d.x() * d.x() + 2.0 * hb * av.x() * d.x() + gC * av.x() * av.x();
          acc_e.g[1] += gA * d.x() * d.y() + hb * (av.x() * d.y() + d.x() * av.y()) +
                        gC * av.x() * av.y();
          acc_e.g[2] += gA * d.x() * d.z() + hb * (av.x() * d.z() + d.x() * av.z()) +
                        gC * av.x() * av.z();
          acc_e.g[3] += gA * d.y() * d.y() + 2.0 * hb * av.y() * d.y() + gC * av.y() * av.y();
          acc_e.g[4] += gA * d.y() * d.z() + hb * (av.y() * d.z() + d.y() * av.z()) +
                        gC * av.y() * av.z();
          acc_e.g[5] += gA * d.z() * d.z() + 2.0 * hb * av.z() * d.z() + gC * av.z() * av.z();
        }
      }
    }
  });

  total.assign(n, Accum{});
  for (const auto& acc : part) {
    for (std::size_t e = 0; e < n; ++e) {
      Accum& t = total[e];
      const Accum& a = acc[e];
      t.touched = t.touched || a.touched;
      t.sigma += a.sigma;
      for (int k = 0; k < 3; ++k) t.center[k] += a.center[k];
      for (int k = 0; k < 6; ++k) t.g[k] += a.g[k];
    }
  }
}

}  // namespace

GradientRecord backward_image(const Scene& scene, const ConeBeamGeometry& geometry,
                              std::size_t view, std::span<const double> pixel_weight,
                              const RenderOptions& options) {
  geometry.validate();
  if (pixel_weight.size() != geometry.pixels()) {
    throw DimensionMismatch("backward: pixel weight size does not match the raster");
  }
  GradientRecord rec;
  rec.reset(scene.size());
  if (scene.empty()) return rec;
  for (const Ellipsoid& e : scene) e.validate();
  const PreparedView pv(scene, geometry, view, options);
  std::vector<Accum> acc;
  accumulate_view(scene, pv, geometry, pixel_weight, options, acc);

  const Pose& pose = pv.pose();
  const Vec3 axis_u = pose.axes.row(0).transpose();
  const Vec3 axis_v = pose.axes.row(1).transpose();
  for (std::size_t e = 0; e < scene.size(); ++e) {
    const Accum& a = acc[e];
    EllipsoidGrad& g = rec.grads[e];
    rec.visible[e] = a.touched ? 1 : 0;
    g.sigma = a.sigma;
    g.center = Vec3(a.center[0], a.center[1], a.center[2]);
    Mat3 gm;
    gm << a.g[0], a.g[1], a.g[2], a.g[1], a.g[3], a.g[4], a.g[2], a.g[4], a.g[5];
    const Ellipsoid& el = scene[e];
    const Quat& q = el.rotation;
    const double qn = q.norm();
    const double qw = q.w() / qn, qx = q.x() / qn, qy = q.y() / qn, qz = q.z() / qn;
    const Mat3 r = rotation_matrix(q);
    const Vec3 wv = el.scale.array().square().inverse();
    for (int k = 0; k < 3; ++k) {
      const Vec3 rk = r.col(k);
      const double dw = rk.dot(gm * rk);
      g.scale(k) = dw * (-2.0 / (el.scale(k) * el.scale(k) * el.scale(k)));
    }
    const Mat3 dr = 2.0 * gm * r * wv.asDiagonal();
    const auto parts = rotation_partials(qw, qx, qy, qz);
    double gq[4];
    for (int k = 0; k < 4; ++k) gq[k] = dr.cwiseProduct(parts[k]).sum();
    const double qh[4] = {qw, qx, qy, qz};
    const double proj = gq[0] * qh[0] + gq[1] * qh[1] + gq[2] * qh[2] + gq[3] * qh[3];
    for (int k = 0; k < 4; ++k) g.rotation[k] = (gq[k] - qh[k] * proj) / qn;

    bool finite = std::isfinite(g.sigma) && g.center.allFinite() && g.scale.allFinite();
    for (double v : g.rotation) finite = finite && std::isfinite(v);
    if (!finite) {
      g = EllipsoidGrad{};
      rec.visible[e] = 0;
      ++rec.nonfinite;
      continue;
    }
    const double su = g.center.dot(axis_u), sv = g.center.dot(axis_v);
    rec.screen_grad[e] = std::sqrt(su * su + sv * sv);
  }
  return rec;
}

BackwardResult backward(const Scene& scene, const ConeBeamGeometry& geometry, std::size_t view,
                        const DetectorImage& target, double lambda_dssim,
                        const RenderOptions& options) {
  BackwardResult out;
  out.rendered = render_view(scene, geometry, view, options);
  std::vector<double> dl;
  out.loss = loss_gradient(out.rendered, target, lambda_dssim, dl);
  out.record = backward_image(scene, geometry, view, dl, options);
  return out;
}

OptimizerState OptimizerState::from_scene(const Scene& scene) {
  OptimizerState s;
  s.params.reserve(scene.size());
  for (const Ellipsoid& e : scene) {
    e.validate();
    Params p;
    p.center = e.center;
    p.scale = e.scale;
    p.quat = {e.rotation.w(), e.rotation.x(), e.rotation.y(), e.rotation.z()};
    p.sigma = e.sigma;
    s.params.push_back(p);
  }
  s.m1.assign(scene.size(), Moments{});
  s.m2.assign(scene.size(), Moments{});
  s.resize_stats();
  return s;
}

Scene OptimizerState::scene() const {
  Scene out(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Params& p = params[i];
    out[i].center = p.center;
    out[i].scale = p.scale;
    out[i].rotation = Quat(p.quat[0], p.quat[1], p.quat[2], p.quat[3]);
    out[i].sigma = p.sigma;
  }
  return out;
}

void OptimizerState::resize_stats() {
  grad_accum.assign(params.size(), 0.0);
  grad_count.assign(params.size(), 0);
}

void adam_step(OptimizerState& state, const GradientRecord& grads, const TrainConfig& config,
               double lr_position) {
  if (grads.grads.size() != state.size()) {
    throw DimensionMismatch("adam_step: gradient record does not match the state");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(kBeta1, t);
  const double bc2 = 1.0 - std::pow(kBeta2, t);
  double lr[OptimizerState::kParams];
  for (int k = 0; k < 3; ++k) lr[k] = lr_position;
  for (int k = 3; k < 6; ++k) lr[k] = config.lr_scale;
  for (int k = 6; k < 10; ++k) lr[k] = config.lr_rotation;
  lr[10] = config.lr_sigma;

  for (std::size_t i = 0; i < state.size(); ++i) {
    OptimizerState::Params& p = state.params[i];
    const EllipsoidGrad& g = grads.grads[i];
    double gv[OptimizerState::kParams];
    for (int k = 0; k < 3; ++k) gv[k] = g.center(k);
    for (int k = 0; k < 3; ++k) gv[3 + k] = g.scale(k) * p.scale(k);  // d/dlog s
    for (int k = 0; k < 4; ++k) gv[6 + k] = g.rotation[k];
    gv[10] = g.sigma;

    double step[OptimizerState::kParams];
    auto& m = state.m1[i];
    auto& v = state.m2[i];
    for (int k = 0; k < OptimizerState::kParams; ++k) {
      m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * gv[k];
      v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * gv[k] * gv[k];
      step[k] = lr[k] * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + kAdamEps);
    }
    for (int k = 0; k < 3; ++k) p.center(k) -= step[k];
    for (int k = 0; k < 3; ++k) {
      if (step[3 + k] != 0.0) p.scale(k) *= std::exp(-step[3 + k]);
    }
    if (step[6] != 0.0 || step[7] != 0.0 || step[8] != 0.0 || step[9] != 0.0) {
      double n2 = 0.0;
      for (int k = 0; k < 4; ++k) {
        p.quat[k] -= step[6 + k];
        n2 += p.quat[k] * p.quat[k];
      }
      const double n = std::sqrt(n2);
      if (n > 0.0 && std::isfinite(n)) {
        for (double& c : p.quat) c /= n;
      } else {
        p.quat = {1.0, 0.0, 0.0, 0.0};
      }
    }
    p.sigma = std::max(0.0, p.sigma - step[10]);
  }
}

namespace {

// Keeps entries with keep[i] != 0, preserving order.
void compact(OptimizerState& s, const std::vector<char>& keep) {
  std::size_t o = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!keep[i]) continue;
    if (o != i) {
      s.params[o] = s.params[i];
      s.m1[o] = s.m1[i];
      s.m2[o] = s.m2[i];
      s.grad_accum[o] = s.grad_accum[i];
      s.grad_count[o] = s.grad_count[i];
    }
    ++o;
  }
  s.params.resize(o);
  s.m1.resize(o);
  s.m2.resize(o);
  s.grad_accum.resize(o);
  s.grad_count.resize(o);
}

std::size_t cap_count(OptimizerState& s, std::size_t max_count) {
  if (s.size() <= max_count) return 0;
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return s.params[a].sigma > s.params[b].sigma;
  });
  std::vector<char> keep(s.size(), 0);
  for (std::size_t k = 0; k < max_count; ++k) keep[order[k]] = 1;
  const std::size_t removed = s.size() - max_count;
  compact(s, keep);
  return removed;
}

void append(OptimizerState& s, const OptimizerState::Params& p) {
  s.params.push_back(p);
  s.m1.push_back({});
  s.m2.push_back({});
  s.grad_accum.push_back(0.0);
  s.grad_count.push_back(0);
}

double scene_extent(const OptimizerState& s) {
  if (s.size() == 0) return 0.0;
  Vec3 mean = Vec3::Zero();
  for (const auto& p : s.params) mean += p.center;
  mean /= static_cast<double>(s.size());
  double r = 0.0;
  for (const auto& p : s.params) r = std::max(r, (p.center - mean).norm());
  return r;
}

}  // namespace

void split_into(OptimizerState& state, std::size_t i, double divisor, std::uint64_t seed,
                std::vector<char>& keep) {
  Rng rng(seed);
  const OptimizerState::Params parent = state.params[i];
  const Mat3 r = rotation_matrix(
      Quat(parent.quat[0], parent.quat[1], parent.quat[2], parent.quat[3]));
  for (int c = 0; c < 2; ++c) {
    OptimizerState::Params child = parent;
    const Vec3 u = rng.in_unit_ball();
    child.center = parent.center + r * parent.scale.cwiseProduct(u);
    child.scale = parent.scale / divisor;
    append(state, child);
    keep.push_back(1);
  }
  keep[i] = 0;
}

DensifyStats densify_geometry(OptimizerState& state, const TrainConfig& config,
                              std::uint64_t tag) {
  DensifyStats st;
  const std::size_t n = state.size();
  if (state.grad_accum.size() != n) state.resize_stats();
  std::vector<char> keep(n, 1);
  const double clone_limit = config.clone_extent_fraction * scene_extent(state);
  const std::uint64_t base = substream_seed(config.seed, "densify", tag);
  for (std::size_t i = 0; i < n; ++i) {
    if (state.params[i].sigma < config.prune_threshold) {
      keep[i] = 0;
      ++st.pruned;
      continue;
    }
    if (state.grad_count[i] == 0) continue;
    const double avg = state.grad_accum[i] / state.grad_count[i];
    if (!(avg > config.grad_threshold)) continue;
    if (state.params[i].scale.maxCoeff() <= clone_limit) {
      append(state, state.params[i]);
      keep.push_back(1);
      ++st.cloned;
    } else {
      split_into(state, i, config.split_divisor, substream_seed(base, "split", i), keep);
      ++st.split;
    }
  }
  compact(state, keep);
  st.capped = cap_count(state, config.max_ellipsoids);
  state.resize_stats();
  return st;
}

MaterialStats densify_material(OptimizerState& state, const TrainConfig& config,
                               std::uint64_t tag) {
  MaterialStats st;
  const std::size_t n = state.size();
  if (n < config.knn_k + 1) return st;
  if (state.grad_accum.size() != n) state.resize_stats();
  Rng rng(substream_seed(config.seed, "material", tag));
  const std::size_t m = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(config.material_subset * static_cast<double>(n))), 1,
      n);
  std::vector<std::size_t> pick(n);
  std::iota(pick.begin(), pick.end(), 0);
  for (std::size_t k = 0; k < m; ++k) std::swap(pick[k], pick[k + rng.below(n - k)]);
  pick.resize(m);
  std::sort(pick.begin(), pick.end());
  st.sampled = m;

  std::vector<Vec3> centers(n);
  for (std::size_t i = 0; i < n; ++i) centers[i] = state.params[i].center;
  const PointIndex index(centers);
  std::vector<double> dist(m), grad(m);
  parallel_for(m, [&](std::size_t k) {
    const std::size_t i = pick[k];
    const auto nb = index.nearest(i, config.knn_k);
    double s = 0.0, contrast = 0.0;
    for (const auto& q : nb) {
      s += q.distance;
      contrast = std::max(contrast, std::abs(state.params[i].sigma - state.params[q.index].sigma));
    }
    dist[k] = s / static_cast<double>(nb.size());
    grad[k] = dist[k] > 0.0 ? contrast / dist[k] : 0.0;
  });
  std::vector<double> ds = dist, gs = grad;
  std::sort(ds.begin(), ds.end());
  std::sort(gs.begin(), gs.end());
  const double dist_q = ds[static_cast<std::size_t>(std::floor(0.25 * (m - 1)))];
  const double grad_q = gs[static_cast<std::size_t>(std::ceil(0.75 * (m - 1)))];

  std::vector<char> keep(n, 1);
  const std::uint64_t base = substream_seed(config.seed, "material-split", tag);
  for (std::size_t k = 0; k < m; ++k) {
    if (dist[k] <= dist_q && grad[k] >= grad_q && grad[k] > 0.0) {
      st.split_indices.push_back(pick[k]);
      split_into(state, pick[k], config.split_divisor, substream_seed(base, "split", pick[k]),
                 keep);
    }
  }
  st.split = st.split_indices.size();
  compact(state, keep);
  cap_count(state, config.max_ellipsoids);
  state.grad_accum.resize(state.size(), 0.0);
  state.grad_count.resize(state.size(), 0);
  return st;
}

TrainResult train(const ProjectionStack& stack, const Scene& init, const TrainConfig& config,
                  const CheckpointFn& checkpoint) {
  config.validate();
  stack.geometry.validate();
  if (stack.views.empty()) throw InvalidParameter("train: at least one training view required");
  if (stack.views.size() != stack.geometry.views()) {
    throw DimensionMismatch("train: view count differs from the geometry angle list");
  }
  TrainResult out;
  out.state = OptimizerState::from_scene(init);
  if (config.iterations == 0) {
    out.scene = init;
    return out;
  }
  const std::size_t views = stack.views.size();
  double initial = -1.0;
  int diverged = 0;
  const double lr0 = std::log(config.lr_position);
  const double lr1 = std::log(config.lr_position_final);
  for (int it = 1; it <= config.iterations; ++it) {
    const std::size_t v = static_cast<std::size_t>(it - 1) % views;
    const Scene scene = out.state.scene();
    const BackwardResult br =
        backward(scene, stack.geometry, v, stack.views[v], config.lambda_dssim, config.render);
    if (!std::isfinite(br.loss)) {
      throw NumericalError("train: non-finite loss at iteration " + std::to_string(it));
    }
    if (initial < 0.0) initial = br.loss;
    diverged = (initial > 0.0 && br.loss > 10.0 * initial) ? diverged + 1 : 0;
    if (diverged >= 500) {
      throw NumericalError("train: diverged (loss " + std::to_string(br.loss) +
                           " > 10x initial " + std::to_string(initial) +
                           " for 500 iterations) at iteration " + std::to_string(it));
    }
    out.log.push_back({it, static_cast<int>(v), br.loss, out.state.size()});
    out.nonfinite_drops += br.record.nonfinite;
    for (std::size_t e = 0; e < out.state.size(); ++e) {
      if (!br.record.visible[e]) continue;
      out.state.grad_accum[e] += br.record.screen_grad[e];
      ++out.state.grad_count[e];
    }
    const double tau =
        config.iterations > 1 ? static_cast<double>(it - 1) / (config.iterations - 1) : 0.0;
    adam_step(out.state, br.record, config, std::exp(lr0 + (lr1 - lr0) * tau));

    if (config.densify_interval > 0 && it >= config.densify_start && it <= config.densify_end &&
        it % config.densify_interval == 0) {
      densify_geometry(out.state, config, static_cast<std::uint64_t>(it));
    }
    if (config.material_interval > 0 && it >= config.material_start &&
        it % config.material_interval == 0) {
      densify_material(out.state, config, static_cast<std::uint64_t>(it));
    }
    if (checkpoint && config.checkpoint_interval > 0 && it % config.checkpoint_interval == 0) {
      checkpoint(it, out.state);
    }
  }
  out.scene = out.state.scene();
  return out;
}

std::string loss_log_csv(const std::vector<LossEntry>& log) {
  std::ostringstream os;
  os << "iteration,view,loss,count\n";
  char buf[64];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%.17g", e.loss);
    os << e.iteration << ',' << e.view << ',' << buf << ',' << e.count << '\n';
  }
  return os.str();
}

}  // namespace xfield
