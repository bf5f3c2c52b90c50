#pragma once

#include <filesystem>
#include <string>

#include "xfield/optimizer.hpp"
#include "xfield/projector.hpp"
#include "xfield/volume.hpp"

namespace xfield::io {

namespace fs = std::filesystem;

// All binary payloads are little-endian. Each dataset is a directory with a
// manifest.json next to its raw files.

/// manifest.json + view_####.raw (float32, row-major, log-space).
void write_stack(const fs::path& dir, const ProjectionStack& stack);
ProjectionStack read_stack(const fs::path& dir);

/// manifest.json + volume.raw (float32, x fastest).
void write_volume(const fs::path& dir, const VoxelVolume& volume);
VoxelVolume read_volume(const fs::path& dir);

/// manifest.json + ellipsoids.raw, 11 float32 per record: center xyz,
/// scale xyz, quaternion wxyz, sigma. Quaternions are renormalised on read.
void write_scene(const fs::path& dir, const Scene& scene);
Scene read_scene(const fs::path& dir);

/// Optimizer sidecar: optimizer.json + moments.raw (float64, per ellipsoid
/// 11 first moments then 11 second moments).
void write_optimizer(const fs::path& dir, const OptimizerState& state);
/// Restores moments and step into `state`, whose parameters come from the
/// matching ellipsoid set.
void read_optimizer(const fs::path& dir, OptimizerState& state);

/// 16-bit grayscale PNG; value v maps to round(65535 * (v - lo) / (hi - lo))
/// clamped to [0, 65535]. hi <= lo selects the image min and max.
void write_png16(const fs::path& path, const DetectorImage& image, double lo = 0.0,
                 double hi = 0.0);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

/// True for a directory holding a manifest.json.
bool is_dataset(const fs::path& dir);

}  // namespace xfield::io
