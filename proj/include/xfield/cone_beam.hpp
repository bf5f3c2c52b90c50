#pragma once

#include <cstddef>
#include <vector>

#include "xfield/geometry.hpp"

namespace xfield {

/// Circular cone-beam acquisition. At angle theta the source sits at
/// frame * (dso cos theta, dso sin theta, 0) + center and the flat detector is
/// centred on the opposite side at distance dsd from the source. Detector
/// u runs along the tangential direction, v along the rotation axis.
/// Pixel (i, j) maps to raster slot j * width + i.
struct ConeBeamGeometry {
  double source_to_origin = 5.0;
  double source_to_detector = 10.0;
  double detector_u = 4.0;
  double detector_v = 4.0;
  int width = 64;
  int height = 64;
  std::vector<double> angles;
  double source_intensity = 1.0;
  // Rotation frame: columns are the in-plane reference x, y and the
  // rotation axis. Identity gives rotation about world z.
  Mat3 frame = Mat3::Identity();
  Vec3 center = Vec3::Zero();

  void validate() const;

  std::size_t views() const { return angles.size(); }
  std::size_t pixels() const {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
  double pixel_u() const { return detector_u / width; }
  double pixel_v() const { return detector_v / height; }

  Pose pose(std::size_t view) const;

  /// Detector-plane coordinates of a pixel centre.
  Vec2 pixel_center(int i, int j) const;

  /// Tile grid aligned to the raster with `tile` pixels per side.
  TileGrid tile_grid(int tile) const;

  ConeBeamGeometry with_angles(std::vector<double> new_angles) const;
};

/// Ray from the source through the centre of pixel (i, j). t_far reaches the
/// detector plane.
Ray generate_ray(const ConeBeamGeometry& geometry, std::size_t view, int i, int j);

Ray generate_ray(const Pose& pose, const Vec2& detector_point);

Conic2D project_silhouette(const Ellipsoid& e, const ConeBeamGeometry& geometry,
                           std::size_t view);

/// `count` angles k * (end - start) / count for k = 0..count-1 (end excluded).
std::vector<double> uniform_angles(std::size_t count, double start_rad, double end_rad);

}  // namespace xfield
