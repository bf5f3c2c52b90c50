#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "xfield/projector.hpp"
#include "xfield/volume.hpp"

namespace xfield {

enum class SigmaMode { voxel, constant };

SigmaMode parse_sigma_mode(const std::string& name);
const char* sigma_mode_name(SigmaMode m);

struct SeedConfig {
  double threshold = 0.05;
  std::size_t count = 4000;
  std::uint64_t seed = 0;
  SigmaMode sigma_mode = SigmaMode::voxel;
  double constant_sigma = 0.05;  // used by SigmaMode::constant

  void validate() const;
};

struct SeedPoint {
  Vec3 position = Vec3::Zero();
  double density = 0.0;
  std::size_t voxel = 0;
};

/// Voxels strictly above the threshold, uniformly subsampled to at most
/// `count`, returned in voxel index order. Throws EmptySeedError when no voxel
/// qualifies.
std::vector<SeedPoint> extract_points(const VoxelVolume& volume, const SeedConfig& config);

/// One isotropic ellipsoid per point: radius = mean distance to its 3 nearest
/// seeds clamped to [0.5, 2] x voxel_size, random orientation, sigma from the
/// voxel value (>= 1e-4) or the configured constant.
Scene seed_ellipsoids(const std::vector<SeedPoint>& points, const SeedConfig& config,
                      double voxel_size);

/// Convenience: extract_points followed by seed_ellipsoids.
Scene seed_from_volume(const VoxelVolume& volume, const SeedConfig& config);

/// Baseline for comparisons: `count` ellipsoids at uniform random positions
/// inside the volume box, otherwise seeded as above.
Scene random_init(const VolumeGrid& grid, std::size_t count, double sigma,
                  std::uint64_t seed);

}  // namespace xfield
