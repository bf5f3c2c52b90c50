#include "xfield/seeding.hpp"

#include <algorithm>
#include <cmath>

#include "xfield/error.hpp"
#include "xfield/knn.hpp"
#include "xfield/rng.hpp"

namespace xfield {

namespace {
constexpr double kMinSigma = 1e-4;
constexpr std::size_t kNeighbors = 3;
}  // namespace

SigmaMode parse_sigma_mode(const std::string& name) {
  if (name == "voxel") return SigmaMode::voxel;
  if (name == "constant") return SigmaMode::constant;
  throw ConfigError("unknown sigma mode '" + name + "' (expected voxel or constant)");
}

const char* sigma_mode_name(SigmaMode m) { return m == SigmaMode::voxel ? "voxel" : "constant"; }

void SeedConfig::validate() const {
  if (!(threshold >= 0.0)) throw InvalidParameter("seed threshold must be >= 0");
  if (count < 1) throw InvalidParameter("seed count must be >= 1");
  if (sigma_mode == SigmaMode::constant && !(constant_sigma >= 0.0)) {
    throw InvalidParameter("constant seed sigma must be >= 0");
  }
}

std::vector<SeedPoint> extract_points(const VoxelVolume& volume, const SeedConfig& config) {
  config.validate();
  volume.grid.validate();
  if (volume.values.size() != volume.grid.voxels()) {
    throw DimensionMismatch("extract_points: value count does not match the grid");
  }
  std::vector<std::size_t> hits;
  for (std::size_t k = 0; k < volume.values.size(); ++k) {
    const double v = volume.values[k];
    if (!std::isfinite(v)) throw NumericalError("extract_points: non-finite voxel value");
    if (v > config.threshold) hits.push_back(k);
  }
  if (hits.empty()) {
    throw EmptySeedError("no voxel exceeds the seed threshold " +
                         std::to_string(config.threshold));
  }
  if (hits.size() > config.count) {
    // Partial Fisher-Yates, then restore index order.
    Rng rng(config.seed, "seed-subsample");
    for (std::size_t i = 0; i < config.count; ++i) {
      const std::size_t j = i + rng.below(hits.size() - i);
      std::swap(hits[i], hits[j]);
    }
    hits.resize(config.count);
    std::sort(hits.begin(), hits.end());
  }
  const auto& d = volume.grid.dims;
  std::vector<SeedPoint> out;
  out.reserve(hits.size());
  for (std::size_t k : hits) {
    const int i = static_cast<int>(k % d[0]);
    const int j = static_cast<int>((k / d[0]) % d[1]);
    const int z = static_cast<int>(k / (static_cast<std::size_t>(d[0]) * d[1]));
    out.push_back({volume.grid.voxel_center(i, j, z), volume.values[k], k});
  }
  return out;
}

Scene seed_ellipsoids(const std::vector<SeedPoint>& points, const SeedConfig& config,
                      double voxel_size) {
  config.validate();
  if (points.empty()) throw EmptySeedError("seed_ellipsoids: no seed points");
  if (!(voxel_size > 0.0)) throw InvalidParameter("seed_ellipsoids: voxel size must be > 0");
  std::vector<Vec3> pos(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) pos[i] = points[i].position;
  const std::vector<double> knn = mean_knn_distance(pos, kNeighbors);

  Scene scene(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    Ellipsoid& e = scene[i];
    e.center = points[i].position;
    const double r = std::clamp(knn[i], 0.5 * voxel_size, 2.0 * voxel_size);
    e.scale = Vec3::Constant(r);
    Rng rng(substream_seed(config.seed, "seed-rotation", i));
    e.rotation = rng.unit_quaternion();
    e.sigma = config.sigma_mode == SigmaMode::voxel ? std::max(points[i].density, kMinSigma)
                                                    : config.constant_sigma;
  }
  return scene;
}

Scene seed_from_volume(const VoxelVolume& volume, const SeedConfig& config) {
  return seed_ellipsoids(extract_points(volume, config), config, volume.grid.spacing.minCoeff());
}

Scene random_init(const VolumeGrid& grid, std::size_t count, double sigma, std::uint64_t seed) {
  if (count < 1) throw InvalidParameter("random_init: count must be >= 1");
  grid.validate();
  Rng rng(seed, "random-init");
  const Vec3 lo = grid.lower_corner(), hi = grid.upper_corner();
  std::vector<SeedPoint> pts(count);
  for (auto& p : pts) {
    for (int a = 0; a < 3; ++a) p.position(a) = rng.uniform(lo(a), hi(a));
    p.density = sigma;
  }
  SeedConfig cfg;
  cfg.count = count;
  cfg.seed = seed;
  return seed_ellipsoids(pts, cfg, grid.spacing.minCoeff());
}

}  // namespace xfield
