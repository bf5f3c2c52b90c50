#include "xfield/cone_beam.hpp"

#include <cmath>
#include <string>

#include "xfield/error.hpp"

namespace xfield {

void ConeBeamGeometry::validate() const {
  if (!(source_to_origin > 0.0) || !(source_to_detector > 0.0)) {
    throw InvalidParameter("geometry: distances must be positive");
  }
  if (!(source_to_detector > source_to_origin)) {
    throw InvalidParameter("geometry: detector must lie beyond the rotation centre");
  }
  if (!(detector_u > 0.0) || !(detector_v > 0.0)) {
    throw InvalidParameter("geometry: detector size must be positive");
  }
  if (width < 1 || height < 1) {
    throw InvalidParameter("geometry: raster must be at least 1x1");
  }
  for (double a : angles) {
    if (!std::isfinite(a)) throw InvalidParameter("geometry: non-finite angle");
  }
  if (!frame.allFinite() || !center.allFinite()) {
    throw InvalidParameter("geometry: non-finite frame");
  }
  if ((frame.transpose() * frame - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9 ||
      frame.determinant() < 0.0) {
    throw InvalidParameter("geometry: frame must be a rotation");
  }
  if (!(source_intensity > 0.0)) {
    throw InvalidParameter("geometry: source intensity must be positive");
  }
}

Pose ConeBeamGeometry::pose(std::size_t view) const {
  if (view >= angles.size()) {
    throw InvalidParameter("geometry: view index " + std::to_string(view) +
                           " out of range");
  }
  const double c = std::cos(angles[view]);
  const double s = std::sin(angles[view]);
  const Vec3 radial = frame * Vec3(c, s, 0.0);
  const Vec3 tangent = frame * Vec3(-s, c, 0.0);
  const Vec3 axis = frame * Vec3(0.0, 0.0, 1.0);
  Pose p;
  p.source = center + source_to_origin * radial;
  p.axes.row(0) = tangent.transpose();
  p.axes.row(1) = axis.transpose();
  p.axes.row(2) = (-radial).transpose();
  p.source_to_detector = source_to_detector;
  return p;
}

Vec2 ConeBeamGeometry::pixel_center(int i, int j) const {
  return {(i + 0.5 - 0.5 * width) * pixel_u(), (j + 0.5 - 0.5 * height) * pixel_v()};
}

TileGrid ConeBeamGeometry::tile_grid(int tile) const {
  TileGrid g;
  g.u0 = -0.5 * detector_u;
  g.v0 = -0.5 * detector_v;
  g.tile_w = tile * pixel_u();
  g.tile_h = tile * pixel_v();
  g.nx = (width + tile - 1) / tile;
  g.ny = (height + tile - 1) / tile;
  return g;
}

ConeBeamGeometry ConeBeamGeometry::with_angles(std::vector<double> new_angles) const {
  ConeBeamGeometry g = *this;
  g.angles = std::move(new_angles);
  return g;
}

Ray generate_ray(const Pose& pose, const Vec2& detector_point) {
  const Vec3 local(detector_point.x(), detector_point.y(), pose.source_to_detector);
  const Vec3 world = pose.axes.transpose() * local;
  Ray r;
  r.origin = pose.source;
  const double len = world.norm();
  r.direction = world / len;
  r.t_near = 0.0;
  r.t_far = len;
  return r;
}

Ray generate_ray(const ConeBeamGeometry& geometry, std::size_t view, int i, int j) {
  if (i < 0 || j < 0 || i >= geometry.width || j >= geometry.height) {
    throw InvalidParameter("generate_ray: pixel (" + std::to_string(i) + ", " +
                           std::to_string(j) + ") outside the raster");
  }
  return generate_ray(geometry.pose(view), geometry.pixel_center(i, j));
}

Conic2D project_silhouette(const Ellipsoid& e, const ConeBeamGeometry& geometry,
                           std::size_t view) {
  return project_silhouette(e, geometry.pose(view));
}

std::vector<double> uniform_angles(std::size_t count, double start_rad, double end_rad) {
  std::vector<double> out(count);
  const double step = count ? (end_rad - start_rad) / static_cast<double>(count) : 0.0;
  for (std::size_t k = 0; k < count; ++k) {
    out[k] = start_rad + static_cast<double>(k) * step;
  }
  return out;
}

}  // namespace xfield
