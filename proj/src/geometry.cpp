#include "xfield/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "xfield/error.hpp"

namespace xfield {

namespace {

bool finite(const Vec3& v) { return v.allFinite(); }

}  // namespace

void Ellipsoid::validate() const {
  if (!finite(center) || !finite(scale) || !std::isfinite(sigma) ||
      !rotation.coeffs().allFinite()) {
    throw InvalidParameter("ellipsoid has non-finite parameters");
  }
  if ((scale.array() <= 0.0).any()) {
    throw InvalidParameter("ellipsoid scale must be strictly positive");
  }
  if (std::abs(rotation.norm() - 1.0) > 1e-9) {
    throw InvalidParameter("ellipsoid rotation is not a unit quaternion");
  }
  if (sigma < 0.0) {
    throw InvalidParameter("ellipsoid sigma must be non-negative");
  }
}

void Ray::validate() const {
  if (!finite(origin) || !finite(direction) || !std::isfinite(t_near) ||
      !std::isfinite(t_far)) {
    throw InvalidParameter("ray has non-finite parameters");
  }
  if (std::abs(direction.norm() - 1.0) > 1e-12) {
    throw InvalidParameter("ray direction is not unit length");
  }
  if (!(t_near < t_far)) {
    throw InvalidParameter("ray interval is empty");
  }
}

Mat3 rotation_matrix(const Quat& q) {
  const double n = q.norm();
  const double w = q.w() / n;
  const double x = q.x() / n;
  const double y = q.y() / n;
  const double z = q.z() / n;
  Mat3 r;
  r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
      2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
      2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
  return r;
}

Covariance covariance(const Ellipsoid& e) {
  if (!finite(e.center) || !finite(e.scale) || !e.rotation.coeffs().allFinite()) {
    throw InvalidParameter("covariance: non-finite ellipsoid parameters");
  }
  if ((e.scale.array() <= 0.0).any()) {
    throw InvalidParameter("covariance: scale must be strictly positive");
  }
  const Mat3 r = rotation_matrix(e.rotation);
  const Vec3 s2 = e.scale.array().square();
  Covariance out;
  out.matrix = r * s2.asDiagonal() * r.transpose();
  out.inverse = r * s2.cwiseInverse().asDiagonal() * r.transpose();
  return out;
}

double l_max(const Ellipsoid& e, const Vec3& direction) {
  const Mat3 inv = covariance(e).inverse;
  return 2.0 / std::sqrt(direction.dot(inv * direction));
}

ChordResult chord(const Vec3& center, const Mat3& inv_cov, const Ray& ray) {
  // Same operation order as the batched kernels so results are bit-equal.
  const Vec3& o = ray.origin;
  const Vec3& d = ray.direction;
  const double tc = (center.x() - o.x()) * d.x() + (center.y() - o.y()) * d.y() +
                    (center.z() - o.z()) * d.z();
  const double ax = (o.x() + tc * d.x()) - center.x();
  const double ay = (o.y() + tc * d.y()) - center.y();
  const double az = (o.z() + tc * d.z()) - center.z();

  const double m00 = inv_cov(0, 0), m01 = inv_cov(0, 1), m02 = inv_cov(0, 2);
  const double m11 = inv_cov(1, 1), m12 = inv_cov(1, 2), m22 = inv_cov(2, 2);

  const double mdx = m00 * d.x() + m01 * d.y() + m02 * d.z();
  const double mdy = m01 * d.x() + m11 * d.y() + m12 * d.z();
  const double mdz = m02 * d.x() + m12 * d.y() + m22 * d.z();
  const double max_ = m00 * ax + m01 * ay + m02 * az;
  const double may = m01 * ax + m11 * ay + m12 * az;
  const double maz = m02 * ax + m12 * ay + m22 * az;

  ChordResult r;
  r.A = d.x() * mdx + d.y() * mdy + d.z() * mdz;
  r.B = ax * mdx + ay * mdy + az * mdz;
  r.C = ax * max_ + ay * may + az * maz;
  if (!(r.A > 0.0) || !std::isfinite(r.A)) {
    throw InvalidParameter("chord: inverse covariance is not positive definite");
  }
  const double s = r.B / r.A;
  const double radicand = std::min(1.0 - (r.C - r.B * s), 1.0);
  r.depth = tc - s;
  if (radicand > 0.0) {
    r.hit = true;
    r.length = (2.0 / std::sqrt(r.A)) * std::sqrt(radicand);
  }
  return r;
}

ChordResult chord(const Ellipsoid& e, const Ray& ray) {
  const Covariance cov = covariance(e);
  return chord(e.center, cov.inverse, ray);
}

double Conic2D::evaluate(const Vec2& p) const {
  const Eigen::Vector3d h(p.x(), p.y(), 1.0);
  return h.dot(m * h);
}

bool OrientedBox2D::contains(const Vec2& p, double tol) const {
  const Vec2 rel = p - center;
  return std::abs(rel.dot(axis0)) <= half_extents.x() + tol &&
         std::abs(rel.dot(axis1)) <= half_extents.y() + tol;
}

Conic2D project_silhouette(const Ellipsoid& e, const Pose& pose) {
  const Covariance cov = covariance(e);
  const Vec3 m = pose.axes * (e.center - pose.source);
  const Mat3 mc = pose.axes * cov.inverse * pose.axes.transpose();
  const Mat3 sc = pose.axes * cov.matrix * pose.axes.transpose();

  const double g = m.dot(mc * m) - 1.0;
  if (!(g > 0.0)) {
    throw DegenerateProjection("project_silhouette: ellipsoid encloses the source");
  }
  if (!(m.z() - std::sqrt(sc(2, 2)) > 0.0)) {
    throw DegenerateProjection("project_silhouette: ellipsoid crosses the source plane");
  }

  // Tangent cone from the source: direction y hits iff y^T K y >= 0.
  const Vec3 mm = mc * m;
  const Mat3 k = mm * mm.transpose() - g * mc;
  const Eigen::DiagonalMatrix<double, 3> s(1.0, 1.0, pose.source_to_detector);
  Eigen::Matrix3d c = -(s * k * s);
  const double norm = c.topLeftCorner<2, 2>().norm();
  Conic2D out;
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw DegenerateProjection("project_silhouette: vanishing conic");
  }
  out.m = c / norm;
  const Mat2 a2 = out.m.topLeftCorner<2, 2>();
  out.degenerate = !(a2(0, 0) > 0.0 && a2.determinant() > 0.0);
  if (out.degenerate) {
    throw DegenerateProjection("project_silhouette: silhouette is not a bounded ellipse");
  }
  return out;
}

OrientedBox2D obb_of_conic(const Conic2D& conic) {
  if (conic.degenerate) {
    throw DegenerateProjection("obb_of_conic: degenerate conic");
  }
  const Mat2 a2 = conic.m.topLeftCorner<2, 2>();
  const Vec2 b = conic.m.block<2, 1>(0, 2);
  const double c = conic.m(2, 2);
  if (!(a2(0, 0) > 0.0 && a2.determinant() > 0.0)) {
    throw DegenerateProjection("obb_of_conic: conic is not an ellipse");
  }
  const Vec2 center = -a2.inverse() * b;
  const double k = c + b.dot(center);
  if (!(k < 0.0)) {
    throw DegenerateProjection("obb_of_conic: conic has an empty interior");
  }

  Eigen::SelfAdjointEigenSolver<Mat2> eig(a2);
  const Vec2 lambda = eig.eigenvalues();  // ascending
  OrientedBox2D box;
  box.center = center;
  const double spread = std::abs(lambda(1) - lambda(0));
  if (spread <= 1e-12 * std::abs(lambda(1))) {
    box.axis0 = Vec2::UnitX();
    box.axis1 = Vec2::UnitY();
    box.half_extents = Vec2(std::sqrt(-k / lambda(0)), std::sqrt(-k / lambda(1)));
  } else {
    box.axis0 = eig.eigenvectors().col(0).normalized();
    box.axis1 = Vec2(-box.axis0.y(), box.axis0.x());
    box.half_extents = Vec2(std::sqrt(-k / lambda(0)), std::sqrt(-k / lambda(1)));
  }
  return box;
}

AxisBox2D ellipse_aabb(const OrientedBox2D& box) {
  const double h0 = box.half_extents.x();
  const double h1 = box.half_extents.y();
  const double ex = std::hypot(h0 * box.axis0.x(), h1 * box.axis1.x());
  const double ey = std::hypot(h0 * box.axis0.y(), h1 * box.axis1.y());
  return {box.center - Vec2(ex, ey), box.center + Vec2(ex, ey)};
}

namespace {

struct TileRange {
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
  bool empty() const { return x1 < x0 || y1 < y0; }
};

TileRange tile_range(const AxisBox2D& box, const TileGrid& grid) {
  TileRange r;
  const double fx0 = std::floor((box.lo.x() - grid.u0) / grid.tile_w);
  const double fx1 = std::floor((box.hi.x() - grid.u0) / grid.tile_w);
  const double fy0 = std::floor((box.lo.y() - grid.v0) / grid.tile_h);
  const double fy1 = std::floor((box.hi.y() - grid.v0) / grid.tile_h);
  if (!std::isfinite(fx0) || !std::isfinite(fx1) || !std::isfinite(fy0) ||
      !std::isfinite(fy1) || fx1 < 0.0 || fy1 < 0.0 || fx0 >= grid.nx ||
      fy0 >= grid.ny) {
    return r;
  }
  r.x0 = static_cast<int>(std::max(0.0, fx0));
  r.x1 = static_cast<int>(std::min<double>(grid.nx - 1, fx1));
  r.y0 = static_cast<int>(std::max(0.0, fy0));
  r.y1 = static_cast<int>(std::min<double>(grid.ny - 1, fy1));
  return r;
}

}  // namespace

std::vector<std::size_t> tiles_overlapping(const OrientedBox2D& box,
                                           const TileGrid& grid, double margin) {
  AxisBox2D aabb = ellipse_aabb(box);
  aabb.lo.array() -= margin;
  aabb.hi.array() += margin;
  const Vec2 half = box.half_extents.array() + margin;

  std::vector<std::size_t> out;
  const TileRange range = tile_range(aabb, grid);
  if (range.empty()) return out;
  const double tw = 0.5 * grid.tile_w;
  const double th = 0.5 * grid.tile_h;
  for (int ty = range.y0; ty <= range.y1; ++ty) {
    for (int tx = range.x0; tx <= range.x1; ++tx) {
      const Vec2 rc(grid.u0 + (tx + 0.5) * grid.tile_w,
                    grid.v0 + (ty + 0.5) * grid.tile_h);
      const Vec2 rel = rc - box.center;
      bool separated = false;
      const Vec2* axes[2] = {&box.axis0, &box.axis1};
      for (int k = 0; k < 2 && !separated; ++k) {
        const Vec2& a = *axes[k];
        const double radius = std::abs(a.x()) * tw + std::abs(a.y()) * th;
        separated = std::abs(a.dot(rel)) > radius + half(k);
      }
      if (!separated) out.push_back(grid.index(tx, ty));
    }
  }
  return out;
}

std::vector<std::size_t> tiles_overlapping_aabb(const AxisBox2D& aabb,
                                                const TileGrid& grid, double margin) {
  AxisBox2D box = aabb;
  box.lo.array() -= margin;
  box.hi.array() += margin;
  std::vector<std::size_t> out;
  const TileRange range = tile_range(box, grid);
  if (range.empty()) return out;
  for (int ty = range.y0; ty <= range.y1; ++ty) {
    for (int tx = range.x0; tx <= range.x1; ++tx) out.push_back(grid.index(tx, ty));
  }
  return out;
}

}  // namespace xfield
