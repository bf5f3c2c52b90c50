#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "xfield/cone_beam.hpp"
#include "xfield/geometry.hpp"
#include "xfield/simd/kernels.hpp"

namespace xfield {

using Scene = std::vector<Ellipsoid>;

/// Log-space detector raster, row-major (slot j * width + i).
struct DetectorImage {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  DetectorImage() = default;
  DetectorImage(int w, int h, double fill = 0.0)
      : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

  double& at(int i, int j) { return values[static_cast<std::size_t>(j) * width + i]; }
  double at(int i, int j) const { return values[static_cast<std::size_t>(j) * width + i]; }
  std::size_t size() const { return values.size(); }
};

/// Training / evaluation data: one log-space image per view.
struct ProjectionStack {
  ConeBeamGeometry geometry;
  std::vector<DetectorImage> views;
};

/// Input to the overlap correction: one raw chord on the current ray.
struct Segment {
  int ellipsoid = 0;
  double depth = 0.0;
  double length = 0.0;
};

/// One corrected chord. `corrected` is a linear function of the chord's own
/// entry/exit and of its predecessor's entry/exit on the active branch:
/// corrected = coeff[0]*entry + coeff[1]*exit + coeff[2]*pred_entry
///           + coeff[3]*pred_exit.
struct SegmentRecord {
  int ellipsoid = 0;
  double depth = 0.0;
  double length = 0.0;
  double corrected = 0.0;
  double valid_begin = 0.0;
  double valid_end = 0.0;
  int predecessor = -1;  // position in the list of the retained comparison chord
  std::array<double, 4> coeff{};
};

using SegmentList = std::vector<SegmentRecord>;

enum class SegmentRule {
  // First-pass max/min branches, plus the containment case (a later chord
  // strictly enclosing the retained one) resolved by subtracting the overlap.
  containment_aware,
  // max/min branches only; an enclosing later chord loses its leading part.
  first_pass,
};

enum class LengthMode {
  corrected,     // overlap-corrected chord lengths
  raw,           // chord lengths without intersection handling
  constant_one,  // every hit contributes length 1
};

enum class Culling { obb, aabb, none };

Culling parse_culling(const std::string& name);
const char* culling_name(Culling c);

struct RenderOptions {
  Culling culling = Culling::obb;
  LengthMode lengths = LengthMode::corrected;
  SegmentRule rule = SegmentRule::containment_aware;
  int tile = 8;
};

/// Applies the first-pass precedence correction to chords sorted by depth.
/// Throws ContractViolation when the input is not sorted or has a negative
/// length.
SegmentList correct_segments(std::span<const Segment> sorted,
                             SegmentRule rule = SegmentRule::containment_aware);

/// sum_i sigma[ellipsoid_i] * corrected_i
double accumulate(const SegmentList& segments, std::span<const double> sigmas);

/// Per-view render context: inverse covariances, silhouette tiles and the
/// per-tile candidate lists. Ellipsoids whose projection is degenerate (the
/// source is inside or behind them) contribute nothing in every culling mode.
class PreparedView {
 public:
  PreparedView(const Scene& scene, const ConeBeamGeometry& geometry, std::size_t view,
               const RenderOptions& options);

  struct Workspace {
    std::vector<double> depth;
    std::vector<double> length;
    std::vector<Segment> hits;
  };

  /// Sorted, corrected segment list for pixel (i, j).
  void trace(int i, int j, Workspace& ws, SegmentList& out) const;

  Ray ray(int i, int j) const;
  const Mat3& inverse_covariance(std::size_t e) const { return inverse_[e]; }
  const Pose& pose() const { return pose_; }
  std::size_t degenerate_count() const { return degenerate_; }
  bool excluded(std::size_t e) const { return excluded_[e] != 0; }
  /// Mean candidate count per tile (diagnostics).
  double mean_candidates() const;

 private:
  const simd::EllipsoidSoA& candidates(int i, int j) const;

  const ConeBeamGeometry* geometry_;
  RenderOptions options_;
  Pose pose_;
  TileGrid grid_;
  std::vector<Mat3> inverse_;
  std::vector<char> excluded_;
  std::vector<simd::EllipsoidSoA> tiles_;
  std::size_t degenerate_ = 0;
};

struct RenderStats {
  std::size_t degenerate = 0;
};

DetectorImage render_view(const Scene& scene, const ConeBeamGeometry& geometry,
                          std::size_t view, const RenderOptions& options = {},
                          RenderStats* stats = nullptr);

ProjectionStack render_stack(const Scene& scene, const ConeBeamGeometry& geometry,
                             const RenderOptions& options = {});

SegmentList trace_pixel(const Scene& scene, const ConeBeamGeometry& geometry,
                        std::size_t view, int i, int j, const RenderOptions& options = {});

/// Beer-Lambert: I' = I0 * exp(-I).
DetectorImage render_linear(const DetectorImage& image, double source_intensity);

/// Log-space value of a linear intensity: log I0 - log I'.
DetectorImage render_log(const DetectorImage& linear, double source_intensity);

/// Principal axis of the scene's mass distribution: top eigenvector of the
/// scatter of the centres plus the summed ellipsoid covariances.
Vec3 principal_axis(const Scene& scene);

/// `views` sources evenly spaced over 360 degrees in the plane orthogonal to
/// principal_axis(scene), centred on the mean ellipsoid centre. Distances and
/// raster come from `base`.
ConeBeamGeometry orbit_geometry(const Scene& scene, const ConeBeamGeometry& base,
                                std::size_t views);

/// Independent Riemann-sum reference along `ray` with step h. Each midpoint
/// sample takes the sigma of the containing ellipsoid whose entry point on
/// this ray comes first. Entry points come from solving the ray/ellipsoid
/// quadratic in the ray frame, not from chord().
double oracle_raymarch(const Scene& scene, const Ray& ray, double h);

}  // namespace xfield
