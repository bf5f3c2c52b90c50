#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xfield/projector.hpp"
#include "xfield/volume.hpp"

namespace xfield {

enum class Preset { two_material_slab, nested_shells, random_k, overlap_pair };

Preset parse_preset(const std::string& name);
const char* preset_name(Preset p);
std::vector<std::string> preset_names();

struct PhantomSpec {
  std::string name = "custom";
  std::uint64_t seed = 0;
  Scene scene;
  int dims = 64;  // voxelization edge length
  double half_extent = 1.0;

  void validate() const;
  VolumeGrid grid() const { return VolumeGrid::cube(dims, half_extent); }
};

/// Presets fit inside [-0.85, 0.85]^3.
///  two-material-slab: two flat slabs of different sigma facing across x = 0.
///  nested-shells: a core plus two concentric rings of blobs, three sigmas.
///  random-k: `k` pairwise disjoint random ellipsoids (default 16).
///  overlap-pair: two ellipsoids of different sigma that both contain the
///  origin, so every view's central ray crosses their overlap.
PhantomSpec make_phantom(Preset preset, std::uint64_t seed, int random_k = 16);
PhantomSpec make_phantom(const std::string& preset, std::uint64_t seed, int random_k = 16);

/// Sigma of the lowest-index ellipsoid containing each voxel centre, 0 elsewhere.
VoxelVolume voxelize(const Scene& scene, const VolumeGrid& grid);
VoxelVolume voxelize(const PhantomSpec& spec);

/// World-space position of the material interface of two-material-slab.
inline constexpr double kSlabInterfaceX = 0.0;

}  // namespace xfield
