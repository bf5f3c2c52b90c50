#include "xfield/projector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "xfield/error.hpp"
#include "xfield/parallel.hpp"

namespace xfield {

Culling parse_culling(const std::string& name) {
  if (name == "obb") return Culling::obb;
  if (name == "aabb") return Culling::aabb;
  if (name == "none") return Culling::none;
  throw ConfigError("unknown culling mode '" + name + "' (expected obb, aabb or none)");
}

const char* culling_name(Culling c) {
  switch (c) {
    case Culling::obb: return "obb";
    case Culling::aabb: return "aabb";
    case Culling::none: return "none";
  }
  return "?";
}

SegmentList correct_segments(std::span<const Segment> sorted, SegmentRule rule) {
  SegmentList out;
  out.reserve(sorted.size());
  double z = 0.0, l = 0.0;
  int retained = -1;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const Segment& s = sorted[i];
    if (!(s.length >= 0.0) || !std::isfinite(s.depth)) {
      throw ContractViolation("correct_segments: invalid segment at position " +
                              std::to_string(i));
    }
    // Near-ties (< 1e-12) may be ordered by index instead of depth.
    if (i > 0 && s.depth < sorted[i - 1].depth - 1e-12) {
      throw ContractViolation("correct_segments: input is not sorted by depth");
    }
    SegmentRecord r;
    r.ellipsoid = s.ellipsoid;
    r.depth = s.depth;
    r.length = s.length;
    const double exit = s.depth + 0.5 * s.length;
    if (i == 0) {
      r.corrected = s.length;
      r.coeff = {-1.0, 1.0, 0.0, 0.0};
      z = s.depth;
      l = s.length;
      retained = 0;
    } else {
      r.predecessor = retained;
      const double prev_exit = z + 0.5 * l;
      const double prev_entry = z - 0.5 * l;
      const double entry = s.depth - 0.5 * s.length;
      if (rule == SegmentRule::containment_aware && entry < prev_entry) {
        // Strictly encloses the retained chord: drop exactly its length.
        r.corrected = s.length - l;
        r.coeff = {-1.0, 1.0, 1.0, -1.0};
      } else if (s.depth < prev_exit) {
        const double tail = exit - prev_exit;
        if (tail >= 0.0) {
          r.corrected = tail;
          r.coeff = {0.0, 1.0, 0.0, -1.0};
        } else {
          r.corrected = 0.0;
          r.coeff = {0.0, 0.0, 0.0, 0.0};
        }
      } else {
        const double tail = exit - prev_exit;
        if (tail <= s.length) {
          r.corrected = tail;
          r.coeff = {0.0, 1.0, 0.0, -1.0};
        } else {
          r.corrected = s.length;
          r.coeff = {-1.0, 1.0, 0.0, 0.0};
        }
      }
      if (r.corrected != 0.0) {
        z = s.depth;
        l = s.length;
        retained = static_cast<int>(i);
      }
    }
    r.valid_end = exit;
    r.valid_begin = exit - r.corrected;
    out.push_back(r);
  }
  return out;
}

double accumulate(const SegmentList& segments, std::span<const double> sigmas) {
  double total = 0.0;
  for (const SegmentRecord& r : segments) {
    total += sigmas[static_cast<std::size_t>(r.ellipsoid)] * r.corrected;
  }
  return total;
}

PreparedView::PreparedView(const Scene& scene, const ConeBeamGeometry& geometry,
                           std::size_t view, const RenderOptions& options)
    : geometry_(&geometry), options_(options), pose_(geometry.pose(view)) {
  if (options.tile < 1) throw InvalidParameter("render: tile size must be >= 1");
  if (options.culling == Culling::none) {
    grid_ = TileGrid{};
    grid_.u0 = -0.5 * geometry.detector_u;
    grid_.v0 = -0.5 * geometry.detector_v;
    grid_.tile_w = geometry.detector_u;
    grid_.tile_h = geometry.detector_v;
  } else {
    grid_ = geometry.tile_grid(options.tile);
  }
  tiles_.resize(static_cast<std::size_t>(grid_.nx) * grid_.ny);
  inverse_.resize(scene.size());
  excluded_.assign(scene.size(), 0);

  const double margin = 1e-7 * std::max(geometry.detector_u, geometry.detector_v);
  std::vector<std::size_t> tiles;
  for (std::size_t e = 0; e < scene.size(); ++e) {
    const Ellipsoid& el = scene[e];
    const Covariance cov = covariance(el);
    inverse_[e] = cov.inverse;
    OrientedBox2D box;
    try {
      box = obb_of_conic(project_silhouette(el, pose_));
    } catch (const DegenerateProjection&) {
      excluded_[e] = 1;
      ++degenerate_;
      continue;
    }
    const double c[3] = {el.center.x(), el.center.y(), el.center.z()};
    const Mat3& m = cov.inverse;
    const double inv[6] = {m(0, 0), m(0, 1), m(0, 2), m(1, 1), m(1, 2), m(2, 2)};
    switch (options.culling) {
      case Culling::none:
        tiles_[0].push_back(c, inv, static_cast<int>(e));
        continue;
      case Culling::aabb: {
        AxisBox2D aabb = ellipse_aabb(box);
        tiles = tiles_overlapping_aabb(aabb, grid_, margin);
        break;
      }
      case Culling::obb:
        tiles = tiles_overlapping(box, grid_, margin);
        break;
    }
    for (std::size_t t : tiles) tiles_[t].push_back(c, inv, static_cast<int>(e));
  }
}

const simd::EllipsoidSoA& PreparedView::candidates(int i, int j) const {
  if (options_.culling == Culling::none) return tiles_[0];
  const int tx = i / options_.tile;
  const int ty = j / options_.tile;
  return tiles_[grid_.index(tx, ty)];
}

double PreparedView::mean_candidates() const {
  double total = 0.0;
  for (const auto& t : tiles_) total += static_cast<double>(t.size());
  return tiles_.empty() ? 0.0 : total / static_cast<double>(tiles_.size());
}

Ray PreparedView::ray(int i, int j) const {
  return generate_ray(pose_, geometry_->pixel_center(i, j));
}

void PreparedView::trace(int i, int j, Workspace& ws, SegmentList& out) const {
  out.clear();
  const simd::EllipsoidSoA& soa = candidates(i, j);
  const std::size_t n = soa.size();
  if (n == 0) return;
  const Ray r = ray(i, j);
  const simd::RayParams rp{r.origin.x(),    r.origin.y(),    r.origin.z(),
                           r.direction.x(), r.direction.y(), r.direction.z()};
  ws.depth.resize(n);
  ws.length.resize(n);
  simd::chord_batch(soa, rp, ws.depth.data(), ws.length.data());

  ws.hits.clear();
  for (std::size_t k = 0; k < n; ++k) {
    if (ws.length[k] > 0.0) ws.hits.push_back({soa.index[k], ws.depth[k], ws.length[k]});
  }
  if (ws.hits.empty()) return;
  std::sort(ws.hits.begin(), ws.hits.end(), [](const Segment& a, const Segment& b) {
    return a.depth < b.depth || (a.depth == b.depth && a.ellipsoid < b.ellipsoid);
  });
  // Near-ties order by ellipsoid index.
  for (std::size_t k = 1; k < ws.hits.size(); ++k) {
    for (std::size_t m = k; m > 0; --m) {
      Segment& a = ws.hits[m - 1];
      Segment& b = ws.hits[m];
      if (std::abs(b.depth - a.depth) < 1e-12 && b.ellipsoid < a.ellipsoid) {
        std::swap(a, b);
      } else {
        break;
      }
    }
  }

  switch (options_.lengths) {
    case LengthMode::corrected:
      out = correct_segments(ws.hits, options_.rule);
      return;
    case LengthMode::raw:
    case LengthMode::constant_one:
      for (const Segment& s : ws.hits) {
        SegmentRecord rec;
        rec.ellipsoid = s.ellipsoid;
        rec.depth = s.depth;
        rec.length = s.length;
        if (options_.lengths == LengthMode::raw) {
          rec.corrected = s.length;
          rec.coeff = {-1.0, 1.0, 0.0, 0.0};
        } else {
          rec.corrected = 1.0;
        }
        rec.valid_end = s.depth + 0.5 * s.length;
        rec.valid_begin = rec.valid_end - s.length;
        out.push_back(rec);
      }
      return;
  }
}

DetectorImage render_view(const Scene& scene, const ConeBeamGeometry& geometry,
                          std::size_t view, const RenderOptions& options,
                          RenderStats* stats) {
  geometry.validate();
  DetectorImage image(geometry.width, geometry.height);
  if (scene.empty()) return image;
  for (const Ellipsoid& e : scene) e.validate();
  const PreparedView pv(scene, geometry, view, options);
  std::vector<double> sigmas(scene.size());
  for (std::size_t e = 0; e < scene.size(); ++e) sigmas[e] = scene[e].sigma;

  parallel_for(static_cast<std::size_t>(geometry.height), [&](std::size_t row) {
    PreparedView::Workspace ws;
    SegmentList segs;
    const int j = static_cast<int>(row);
    for (int i = 0; i < geometry.width; ++i) {
      pv.trace(i, j, ws, segs);
      image.at(i, j) = accumulate(segs, sigmas);
    }
  });
  if (stats) stats->degenerate += pv.degenerate_count();
  return image;
}

ProjectionStack render_stack(const Scene& scene, const ConeBeamGeometry& geometry,
                             const RenderOptions& options) {
  ProjectionStack stack;
  stack.geometry = geometry;
  stack.views.reserve(geometry.views());
  for (std::size_t v = 0; v < geometry.views(); ++v) {
    stack.views.push_back(render_view(scene, geometry, v, options));
  }
  return stack;
}

SegmentList trace_pixel(const Scene& scene, const ConeBeamGeometry& geometry,
                        std::size_t view, int i, int j, const RenderOptions& options) {
  if (i < 0 || j < 0 || i >= geometry.width || j >= geometry.height) {
    throw InvalidParameter("trace_pixel: pixel outside the raster");
  }
  const PreparedView pv(scene, geometry, view, options);
  PreparedView::Workspace ws;
  SegmentList out;
  pv.trace(i, j, ws, out);
  return out;
}

DetectorImage render_linear(const DetectorImage& image, double source_intensity) {
  if (!(source_intensity > 0.0)) {
    throw InvalidParameter("render_linear: source intensity must be positive");
  }
  DetectorImage out(image.width, image.height);
  for (std::size_t k = 0; k < image.size(); ++k) {
    out.values[k] = source_intensity * std::exp(-image.values[k]);
  }
  return out;
}

DetectorImage render_log(const DetectorImage& linear, double source_intensity) {
  if (!(source_intensity > 0.0)) {
    throw InvalidParameter("render_log: source intensity must be positive");
  }
  DetectorImage out(linear.width, linear.height);
  for (std::size_t k = 0; k < linear.size(); ++k) {
    out.values[k] = std::log(source_intensity) - std::log(linear.values[k]);
  }
  return out;
}

Vec3 principal_axis(const Scene& scene) {
  if (scene.empty()) throw InvalidParameter("principal_axis: empty scene");
  Vec3 mean = Vec3::Zero();
  for (const Ellipsoid& e : scene) mean += e.center;
  mean /= static_cast<double>(scene.size());
  Mat3 scatter = Mat3::Zero();
  for (const Ellipsoid& e : scene) {
    const Vec3 r = e.center - mean;
    scatter += r * r.transpose() + covariance(e).matrix;
  }
  const Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter);
  Vec3 axis = eig.eigenvectors().col(2).normalized();
  // Sign convention: largest component positive.
  Eigen::Index k;
  axis.cwiseAbs().maxCoeff(&k);
  if (axis(k) < 0.0) axis = -axis;
  return axis;
}

ConeBeamGeometry orbit_geometry(const Scene& scene, const ConeBeamGeometry& base,
                                std::size_t views) {
  if (views < 1) throw InvalidParameter("orbit_geometry: need at least one view");
  const Vec3 axis = principal_axis(scene);
  Vec3 mean = Vec3::Zero();
  for (const Ellipsoid& e : scene) mean += e.center;
  mean /= static_cast<double>(scene.size());
  // First in-plane direction: the world axis least aligned with the axis,
  // orthogonalised.
  Eigen::Index k;
  axis.cwiseAbs().minCoeff(&k);
  Vec3 x = Vec3::Unit(k);
  x = (x - axis * axis.dot(x)).normalized();
  const Vec3 y = axis.cross(x);
  ConeBeamGeometry g = base;
  g.frame.col(0) = x;
  g.frame.col(1) = y;
  g.frame.col(2) = axis;
  g.center = mean;
  g.angles = uniform_angles(views, 0.0, 2.0 * std::numbers::pi);
  g.validate();
  return g;
}

double oracle_raymarch(const Scene& scene, const Ray& ray, double h) {
  if (!(h > 0.0)) throw InvalidParameter("oracle_raymarch: step must be positive");
  struct Interval {
    double entry, exit, sigma;
  };
  std::vector<Interval> spans;
  for (const Ellipsoid& e : scene) {
    // Unit-sphere frame of the ellipsoid: x' = S^-1 R^T (x - c).
    const Mat3 r = rotation_matrix(e.rotation);
    const Vec3 inv_s = e.scale.cwiseInverse();
    const Vec3 p = inv_s.asDiagonal() * (r.transpose() * (ray.origin - e.center));
    const Vec3 q = inv_s.asDiagonal() * (r.transpose() * ray.direction);
    const double a = q.squaredNorm();
    const double b = 2.0 * p.dot(q);
    const double c = p.squaredNorm() - 1.0;
    const double disc = b * b - 4.0 * a * c;
    if (!(disc > 0.0)) continue;
    const double root = std::sqrt(disc);
    const double qq = -0.5 * (b + std::copysign(root, b));
    double t1 = qq / a;
    double t2 = c / qq;
    if (t1 > t2) std::swap(t1, t2);
    spans.push_back({t1, t2, e.sigma});
  }
  if (spans.empty()) return 0.0;
  const auto steps = static_cast<long long>(std::ceil((ray.t_far - ray.t_near) / h));
  double total = 0.0;
  for (long long k = 0; k < steps; ++k) {
    const double t = ray.t_near + (static_cast<double>(k) + 0.5) * h;
    double best_entry = std::numeric_limits<double>::infinity();
    double sigma = 0.0;
    for (const Interval& s : spans) {
      if (t >= s.entry && t <= s.exit && s.entry < best_entry) {
        best_entry = s.entry;
        sigma = s.sigma;
      }
    }
    total += sigma * h;
  }
  return total;
}

}  // namespace xfield
