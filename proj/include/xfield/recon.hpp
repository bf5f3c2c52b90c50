#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xfield/cone_beam.hpp"
#include "xfield/projector.hpp"
#include "xfield/volume.hpp"

namespace xfield {

/// Linear system operator with optional row blocks (one block per view for
/// tomographic operators). adjoint_block overwrites its output.
class LinearOperator {
 public:
  virtual ~LinearOperator() = default;

  virtual std::size_t rows() const = 0;
  virtual std::size_t cols() const = 0;
  virtual std::size_t blocks() const { return 1; }
  /// [first, last) rows of block b.
  virtual std::pair<std::size_t, std::size_t> block_rows(std::size_t b) const {
    (void)b;
    return {0, rows()};
  }
  virtual void apply_block(std::size_t b, std::span<const double> x,
                           std::span<double> y_block) const = 0;
  virtual void adjoint_block(std::size_t b, std::span<const double> y_block,
                             std::span<double> x) const = 0;

  void apply(std::span<const double> x, std::span<double> y) const;
  void adjoint(std::span<const double> y, std::span<double> x) const;
};

/// Row-major dense matrix, split into `blocks` row blocks of near-equal size.
class DenseOperator final : public LinearOperator {
 public:
  DenseOperator(std::size_t rows, std::size_t cols, std::vector<double> values,
                std::size_t blocks = 1);

  std::size_t rows() const override { return rows_; }
  std::size_t cols() const override { return cols_; }
  std::size_t blocks() const override { return blocks_; }
  std::pair<std::size_t, std::size_t> block_rows(std::size_t b) const override;
  void apply_block(std::size_t b, std::span<const double> x,
                   std::span<double> y_block) const override;
  void adjoint_block(std::size_t b, std::span<const double> y_block,
                     std::span<double> x) const override;

 private:
  std::size_t rows_, cols_, blocks_;
  std::vector<double> a_;
};

/// Ray-driven trilinear projector: every detector ray is sampled inside the
/// volume box at midpoints of equal steps no longer than half the smallest
/// voxel spacing (clamp-to-edge interpolation), and the adjoint scatters with
/// exactly the same weights.
class VoxelProjector final : public LinearOperator {
 public:
  VoxelProjector(ConeBeamGeometry geometry, VolumeGrid grid);

  std::size_t rows() const override { return geometry_.views() * geometry_.pixels(); }
  std::size_t cols() const override { return grid_.voxels(); }
  std::size_t blocks() const override { return geometry_.views(); }
  std::pair<std::size_t, std::size_t> block_rows(std::size_t b) const override;
  void apply_block(std::size_t b, std::span<const double> x,
                   std::span<double> y_block) const override;
  void adjoint_block(std::size_t b, std::span<const double> y_block,
                     std::span<double> x) const override;

  const ConeBeamGeometry& geometry() const { return geometry_; }
  const VolumeGrid& grid() const { return grid_; }
  double step() const { return step_; }

 private:
  template <class Visit>
  void walk(std::size_t view, int i, int j, Visit&& visit) const;

  ConeBeamGeometry geometry_;
  VolumeGrid grid_;
  double step_;
};

struct CglsResult {
  std::vector<double> x;
  std::vector<double> residual_norms;  // ||b - A x|| before and after each iteration
};

/// Conjugate gradient on the normal equations of min ||A x - b||. Stops early
/// once the normal-equation residual vanishes. No clamping is applied here.
CglsResult cgls(const LinearOperator& op, std::span<const double> b, int iterations,
                std::span<const double> x0);

struct SartResult {
  std::vector<double> x;
  std::vector<double> residual_norms;  // after each sweep
};

/// Block-sequential SART with row/column-sum normalisation; the iterate is
/// projected onto x >= 0 after each sweep.
SartResult sart(const LinearOperator& op, std::span<const double> b, int sweeps,
                double relaxation, std::span<const double> x0);

/// Smoothed isotropic total variation, sum sqrt(|grad x|^2 + eps), forward
/// differences with a replicated upper boundary.
double total_variation(const VoxelVolume& volume, double eps = 1e-8);

/// Steepest-descent TV steps; each step moves at most `step_size` per voxel
/// and is halved until TV does not increase, so TV(output) <= TV(input).
VoxelVolume tv_denoise(const VoxelVolume& volume, int steps, double step_size);

std::vector<double> flatten(const ProjectionStack& stack);

/// Volume-level wrappers using the voxel projector for `grid`.
VoxelVolume cgls(const ProjectionStack& stack, int iterations, const VoxelVolume& volume0);
VoxelVolume sart(const ProjectionStack& stack, int sweeps, double relaxation,
                 const VoxelVolume& volume0);

struct HybridSchedule {
  int cgls_iterations = 20;
  int sart_sweeps = 5;
  int tv_steps = 30;
  double sart_relaxation = 1.0;
  // TV step size as a fraction of the current volume maximum.
  double tv_step_fraction = 0.01;
  // When set, TV steps are spread between SART sweeps instead of run after.
  bool interleave_tv = false;
};

/// CGLS -> SART (warm start) -> TV, clamped to >= 0 at the end.
VoxelVolume hybrid_init(const ProjectionStack& stack, const HybridSchedule& schedule,
                        const VolumeGrid& grid);

enum class ReconMethod { sart, cgls_tv };

ReconMethod parse_recon_method(const std::string& name);
const char* recon_method_name(ReconMethod m);

struct ReconOptions {
  int sart_sweeps = 20;
  double sart_relaxation = 1.0;
  int cgls_iterations = 30;
  int tv_steps = 20;
  double tv_step_fraction = 0.005;
};

/// Final CT volume from a dense rendered stack (>= 2 views).
VoxelVolume recon_ct(const ProjectionStack& stack, ReconMethod method,
                     const VolumeGrid& grid, const ReconOptions& options = {});

}  // namespace xfield
