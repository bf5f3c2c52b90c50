#pragma once

#include <cstddef>
#include <vector>

#include "xfield/types.hpp"

namespace xfield {

/// One material blob: an ellipsoid with a constant attenuation coefficient.
///
/// The shape is stored as per-axis semi-axis lengths plus a unit quaternion so
/// the implied covariance R diag(scale^2) R^T is SPD by construction.
struct Ellipsoid {
  Vec3 center = Vec3::Zero();
  Vec3 scale = Vec3::Ones();
  Quat rotation = Quat::Identity();
  double sigma = 0.0;

  /// Throws InvalidParameter when any invariant is broken.
  void validate() const;
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double t_near = 0.0;
  double t_far = 1.0;

  Vec3 at(double t) const { return origin + t * direction; }
  void validate() const;
};

struct ChordResult {
  double A = 0.0;
  double B = 0.0;
  double C = 0.0;
  double length = 0.0;
  double depth = 0.0;  // ray parameter of the chord midpoint
  bool hit = false;

  double entry() const { return depth - 0.5 * length; }
  double exit() const { return depth + 0.5 * length; }
};

struct Covariance {
  Mat3 matrix;
  Mat3 inverse;
};

/// Camera frame of one view. `axes` rows are the detector u axis, the
/// detector v axis and the unit axis from the source toward the detector
/// centre; a world point X has camera coordinates axes * (X - source).
struct Pose {
  Vec3 source = Vec3::Zero();
  Mat3 axes = Mat3::Identity();
  double source_to_detector = 1.0;
};

/// Homogeneous detector-plane conic; a point (u, v) is inside when
/// [u v 1] m [u v 1]^T <= 0.
struct Conic2D {
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  bool degenerate = true;

  double evaluate(const Vec2& p) const;
};

struct OrientedBox2D {
  Vec2 center = Vec2::Zero();
  Vec2 axis0 = Vec2::UnitX();
  Vec2 axis1 = Vec2::UnitY();
  Vec2 half_extents = Vec2::Zero();

  bool contains(const Vec2& p, double tol = 0.0) const;
  double area() const { return 4.0 * half_extents.x() * half_extents.y(); }
};

struct AxisBox2D {
  Vec2 lo = Vec2::Zero();
  Vec2 hi = Vec2::Zero();
};

/// Regular tiling of the detector plane; tile (tx, ty) spans
/// [u0 + tx*tile_w, u0 + (tx+1)*tile_w] x [v0 + ty*tile_h, v0 + (ty+1)*tile_h].
struct TileGrid {
  double u0 = 0.0;
  double v0 = 0.0;
  double tile_w = 1.0;
  double tile_h = 1.0;
  int nx = 1;
  int ny = 1;

  std::size_t index(int tx, int ty) const {
    return static_cast<std::size_t>(ty) * static_cast<std::size_t>(nx) +
           static_cast<std::size_t>(tx);
  }
};

Mat3 rotation_matrix(const Quat& q);

Covariance covariance(const Ellipsoid& e);

double l_max(const Ellipsoid& e, const Vec3& direction);

/// Closed-form chord through `e` along `ray`, evaluated about the ray point
/// closest to the ellipsoid centre. Rays whose radicand is <= 0 miss.
ChordResult chord(const Ellipsoid& e, const Ray& ray);

/// Same as chord() with a precomputed inverse covariance.
ChordResult chord(const Vec3& center, const Mat3& inv_cov, const Ray& ray);

Conic2D project_silhouette(const Ellipsoid& e, const Pose& pose);

/// Principal-axis box of a bounded conic. Equal eigenvalues give the
/// coordinate axes.
OrientedBox2D obb_of_conic(const Conic2D& conic);

/// Tight axis-aligned box of the ellipse inscribed in `box` (the box
/// half-extents are the ellipse semi-axes).
AxisBox2D ellipse_aabb(const OrientedBox2D& box);

/// Tiles intersecting both the OBB and the tight axis-aligned box of its
/// inscribed ellipse; `margin` inflates both boxes.
std::vector<std::size_t> tiles_overlapping(const OrientedBox2D& box,
                                           const TileGrid& grid,
                                           double margin = 0.0);

std::vector<std::size_t> tiles_overlapping_aabb(const AxisBox2D& aabb,
                                                const TileGrid& grid,
                                                double margin = 0.0);

}  // namespace xfield
