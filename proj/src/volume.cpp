#include "xfield/volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xfield/error.hpp"

namespace xfield {

VolumeGrid VolumeGrid::cube(int n, double half_extent) {
  if (n < 1 || !(half_extent > 0.0)) {
    throw InvalidParameter("VolumeGrid::cube: need n >= 1 and a positive extent");
  }
  VolumeGrid g;
  g.dims = {n, n, n};
  const double h = 2.0 * half_extent / n;
  g.spacing = Vec3::Constant(h);
  g.origin = Vec3::Constant(-half_extent + 0.5 * h);
  return g;
}

void VolumeGrid::validate() const {
  if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1) {
    throw InvalidParameter("volume: dims must be >= 1");
  }
  if (!spacing.allFinite() || (spacing.array() <= 0.0).any()) {
    throw InvalidParameter("volume: spacing must be positive");
  }
  if (!origin.allFinite()) throw InvalidParameter("volume: non-finite origin");
}

double VoxelVolume::max_value() const {
  if (values.empty()) return 0.0;
  return *std::max_element(values.begin(), values.end());
}

}  // namespace xfield
