#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "xfield/types.hpp"

namespace xfield {

/// Uniform-grid point index for exact k-nearest-neighbour queries. Ties are
/// broken by point index so results are deterministic.
class PointIndex {
 public:
  explicit PointIndex(std::span<const Vec3> points);

  struct Neighbor {
    std::size_t index;
    double distance;
  };

  /// k nearest points to points[query], excluding the query itself; fewer
  /// when the set is smaller.
  std::vector<Neighbor> nearest(std::size_t query, std::size_t k) const;

  std::size_t size() const { return points_.size(); }

 private:
  std::vector<Vec3> points_;
  Vec3 lo_ = Vec3::Zero();
  double cell_ = 1.0;
  int n_[3] = {1, 1, 1};
  std::vector<std::size_t> start_;  // CSR offsets per cell
  std::vector<std::size_t> items_;

  int cell_coord(double x, int axis) const;
};

/// Mean distance to the k nearest other points, per point (0 when alone).
std::vector<double> mean_knn_distance(std::span<const Vec3> points, std::size_t k);

}  // namespace xfield
