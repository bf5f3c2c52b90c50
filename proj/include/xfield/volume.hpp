#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "xfield/types.hpp"

namespace xfield {

/// Regular voxel lattice. `origin` is the world position of the centre of
/// voxel (0, 0, 0); voxel (i, j, k) sits at origin + (i, j, k) * spacing.
struct VolumeGrid {
  std::array<int, 3> dims{1, 1, 1};
  Vec3 spacing = Vec3::Ones();
  Vec3 origin = Vec3::Zero();

  /// n^3 voxels exactly tiling the cube [-half_extent, half_extent]^3.
  static VolumeGrid cube(int n, double half_extent);

  std::size_t voxels() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i;
  }
  Vec3 voxel_center(int i, int j, int k) const {
    return origin + Vec3(i * spacing.x(), j * spacing.y(), k * spacing.z());
  }
  Vec3 lower_corner() const { return origin - 0.5 * spacing; }
  Vec3 upper_corner() const {
    return origin + Vec3((dims[0] - 0.5) * spacing.x(), (dims[1] - 0.5) * spacing.y(),
                         (dims[2] - 0.5) * spacing.z());
  }
  void validate() const;
  bool same_shape(const VolumeGrid& other) const { return dims == other.dims; }
};

/// Density grid, x fastest (slot (k * ny + j) * nx + i). Held in double
/// precision in memory; files store 32-bit floats.
struct VoxelVolume {
  VolumeGrid grid;
  std::vector<double> values;

  VoxelVolume() = default;
  explicit VoxelVolume(const VolumeGrid& g, double fill = 0.0)
      : grid(g), values(g.voxels(), fill) {}

  double& at(int i, int j, int k) { return values[grid.index(i, j, k)]; }
  double at(int i, int j, int k) const { return values[grid.index(i, j, k)]; }
  double max_value() const;
};

}  // namespace xfield
