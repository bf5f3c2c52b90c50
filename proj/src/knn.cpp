#include "xfield/knn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xfield/parallel.hpp"

namespace xfield {

PointIndex::PointIndex(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  if (points_.empty()) {
    start_.assign(2, 0);
    return;
  }
  Vec3 lo = points_[0], hi = points_[0];
  for (const Vec3& p : points_) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 ext = (hi - lo).cwiseMax(Vec3::Constant(1e-12));
  // About two points per cell on average for a volume-filling cloud.
  const double vol = ext.prod();
  cell_ = std::cbrt(2.0 * vol / static_cast<double>(points_.size()));
  cell_ = std::max(cell_, ext.maxCoeff() / 256.0);
  lo_ = lo;
  for (int a = 0; a < 3; ++a) {
    n_[a] = std::max(1, static_cast<int>(std::floor(ext(a) / cell_)) + 1);
  }
  const std::size_t cells = static_cast<std::size_t>(n_[0]) * n_[1] * n_[2];
  std::vector<std::size_t> cell_of(points_.size());
  start_.assign(cells + 1, 0);
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const Vec3& p = points_[i];
    const std::size_t c =
        (static_cast<std::size_t>(cell_coord(p.z(), 2)) * n_[1] + cell_coord(p.y(), 1)) * n_[0] +
        cell_coord(p.x(), 0);
    cell_of[i] = c;
    ++start_[c + 1];
  }
  for (std::size_t c = 0; c < cells; ++c) start_[c + 1] += start_[c];
  items_.resize(points_.size());
  std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
  for (std::size_t i = 0; i < points_.size(); ++i) items_[fill[cell_of[i]]++] = i;
}

int PointIndex::cell_coord(double x, int axis) const {
  const int c = static_cast<int>(std::floor((x - lo_(axis)) / cell_));
  return std::clamp(c, 0, n_[axis] - 1);
}

std::vector<PointIndex::Neighbor> PointIndex::nearest(std::size_t query, std::size_t k) const {
  std::vector<Neighbor> best;
  if (k == 0 || points_.size() < 2) return best;
  k = std::min(k, points_.size() - 1);
  const Vec3& q = points_[query];
  const int c[3] = {cell_coord(q.x(), 0), cell_coord(q.y(), 1), cell_coord(q.z(), 2)};
  const int max_ring = std::max({n_[0], n_[1], n_[2]});
  auto worse = [](const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
  };
  for (int ring = 0; ring <= max_ring; ++ring) {
    for (int z = c[2] - ring; z <= c[2] + ring; ++z) {
      if (z < 0 || z >= n_[2]) continue;
      for (int y = c[1] - ring; y <= c[1] + ring; ++y) {
        if (y < 0 || y >= n_[1]) continue;
        for (int x = c[0] - ring; x <= c[0] + ring; ++x) {
          if (x < 0 || x >= n_[0]) continue;
          const int cheb = std::max({std::abs(x - c[0]), std::abs(y - c[1]), std::abs(z - c[2])});
          if (cheb != ring) continue;
          const std::size_t cell = (static_cast<std::size_t>(z) * n_[1] + y) * n_[0] + x;
          for (std::size_t s = start_[cell]; s < start_[cell + 1]; ++s) {
            const std::size_t idx = items_[s];
            if (idx == query) continue;
            const Neighbor nb{idx, (points_[idx] - q).norm()};
            if (best.size() < k) {
              best.push_back(nb);
              std::push_heap(best.begin(), best.end(), worse);
            } else if (worse(nb, best.front())) {
              std::pop_heap(best.begin(), best.end(), worse);
              best.back() = nb;
              std::push_heap(best.begin(), best.end(), worse);
            }
          }
        }
      }
    }
    // Every unvisited point is at least ring * cell_ away.
    if (best.size() == k && best.front().distance <= ring * cell_) break;
  }
  std::sort(best.begin(), best.end(), worse);
  return best;
}

std::vector<double> mean_knn_distance(std::span<const Vec3> points, std::size_t k) {
  const PointIndex index(points);
  std::vector<double> out(points.size(), 0.0);
  parallel_for(points.size(), [&](std::size_t i) {
    const auto nb = index.nearest(i, k);
    if (nb.empty()) return;
    double s = 0.0;
    for (const auto& n : nb) s += n.distance;
    out[i] = s / static_cast<double>(nb.size());
  });
  return out;
}

}  // namespace xfield
