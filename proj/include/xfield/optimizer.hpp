#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xfield/projector.hpp"

namespace xfield {

struct TrainConfig {
  double lambda_dssim = 0.25;
  double lr_position = 2e-4;
  double lr_sigma = 1e-2;
  double lr_scale = 5e-3;
  double lr_rotation = 1e-3;
  // Position rate decays log-linearly to this value at the last iteration;
  // equal to lr_position means constant.
  double lr_position_final = 2e-5;

  double prune_threshold = 1e-5;
  int densify_interval = 100;
  int densify_start = 1000;
  int densify_end = 10000;
  int material_start = 15000;
  int material_interval = 100;
  std::size_t max_ellipsoids = 500000;
  int iterations = 30000;
  double split_divisor = 1.6;
  // Positional-gradient statistic above which an ellipsoid is densified.
  double grad_threshold = 2e-3;
  // Ellipsoids whose largest semi-axis is below this fraction of the scene
  // extent are cloned, larger ones are split.
  double clone_extent_fraction = 0.02;
  std::size_t knn_k = 8;
  double material_subset = 0.1;
  std::uint64_t seed = 0;

  int checkpoint_interval = 0;  // 0 = none
  RenderOptions render{};

  void validate() const;
};

/// Per-ellipsoid gradient of a scalar objective. `scale` is d/d(semi-axis),
/// `rotation` is d/d(raw quaternion coefficients w, x, y, z).
struct EllipsoidGrad {
  Vec3 center = Vec3::Zero();
  Vec3 scale = Vec3::Zero();
  std::array<double, 4> rotation{};
  double sigma = 0.0;
};

struct GradientRecord {
  std::vector<EllipsoidGrad> grads;
  // Magnitude of the centre gradient in the detector plane, per ellipsoid.
  std::vector<double> screen_grad;
  // Ellipsoids hit by at least one ray of the view.
  std::vector<char> visible;
  std::size_t nonfinite = 0;  // ellipsoids dropped for this step

  void reset(std::size_t n);
};

/// (1 - lambda) * mean|pred - target| + lambda * (1 - SSIM) / 2; the SSIM data
/// range is max(target) (1 when the target is non-positive).
double loss(const DetectorImage& pred, const DetectorImage& target, double lambda_dssim);

/// loss() together with d loss / d pred.
double loss_gradient(const DetectorImage& pred, const DetectorImage& target, double lambda_dssim,
                     std::vector<double>& grad);

/// Gradient of sum_p weight[p] * I_p for a rendered view I.
GradientRecord backward_image(const Scene& scene, const ConeBeamGeometry& geometry,
                              std::size_t view, std::span<const double> pixel_weight,
                              const RenderOptions& options = {});

struct BackwardResult {
  GradientRecord record;
  double loss = 0.0;
  DetectorImage rendered;
};

BackwardResult backward(const Scene& scene, const ConeBeamGeometry& geometry, std::size_t view,
                        const DetectorImage& target, double lambda_dssim,
                        const RenderOptions& options = {});

/// Optimisable state: parameters plus first/second moments per ellipsoid.
/// Scale moments refer to log(scale) and scale updates are multiplicative, so
/// scales stay positive; quaternions are renormalised after non-zero updates.
struct OptimizerState {
  struct Params {
    Vec3 center = Vec3::Zero();
    Vec3 scale = Vec3::Ones();
    std::array<double, 4> quat{1.0, 0.0, 0.0, 0.0};  // w, x, y, z
    double sigma = 0.0;
  };
  static constexpr int kParams = 11;
  using Moments = std::array<double, kParams>;

  std::vector<Params> params;
  std::vector<Moments> m1, m2;
  std::int64_t step = 0;
  // Densification statistics.
  std::vector<double> grad_accum;
  std::vector<int> grad_count;

  static OptimizerState from_scene(const Scene& scene);
  Scene scene() const;
  std::size_t size() const { return params.size(); }
  void resize_stats();
};

/// One adaptive-moment update (beta1 0.9, beta2 0.999, eps 1e-15).
void adam_step(OptimizerState& state, const GradientRecord& grads, const TrainConfig& config,
               double lr_position);

struct DensifyStats {
  std::size_t pruned = 0;
  std::size_t cloned = 0;
  std::size_t split = 0;
  std::size_t capped = 0;
};

/// Prune low-sigma, clone small and split large high-gradient ellipsoids,
/// then cap the count by keeping the highest sigma. `tag` selects the RNG
/// substream (normally the iteration).
DensifyStats densify_geometry(OptimizerState& state, const TrainConfig& config,
                              std::uint64_t tag);

struct MaterialStats {
  std::size_t sampled = 0;
  std::size_t split = 0;
  std::vector<std::size_t> split_indices;  // indices before splitting
};

/// Splits ellipsoids that sit in dense regions with a strong neighbour sigma
/// contrast.
MaterialStats densify_material(OptimizerState& state, const TrainConfig& config,
                               std::uint64_t tag);

/// Appends two children of ellipsoid `i` (semi-axes divided by `divisor`,
/// centres drawn inside the parent) and clears keep[i].
void split_into(OptimizerState& state, std::size_t i, double divisor, std::uint64_t seed,
                std::vector<char>& keep);

struct LossEntry {
  int iteration = 0;
  int view = 0;
  double loss = 0.0;
  std::size_t count = 0;
};

struct TrainResult {
  Scene scene;
  std::vector<LossEntry> log;
  OptimizerState state;
  std::size_t nonfinite_drops = 0;
};

using CheckpointFn = std::function<void(int iteration, const OptimizerState& state)>;

/// Round-robin fitting of `init` to `stack`.
TrainResult train(const ProjectionStack& stack, const Scene& init, const TrainConfig& config,
                  const CheckpointFn& checkpoint = {});

std::string loss_log_csv(const std::vector<LossEntry>& log);

}  // namespace xfield
