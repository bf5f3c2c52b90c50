#include "xfield/recon.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "xfield/error.hpp"
#include "xfield/parallel.hpp"
#include "xfield/simd/kernels.hpp"

namespace xfield {

namespace {

// Fixed partition for scatter-style adjoints; independent of the worker count
// so the summation order never changes.
constexpr std::size_t kScatterChunks = 4;

double norm2(std::span<const double> v) { return std::sqrt(simd::dot(v, v)); }

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericalError(std::string(what) + ": non-finite value");
  }
}

}  // namespace

void LinearOperator::apply(std::span<const double> x, std::span<double> y) const {
  if (x.size() != cols() || y.size() != rows()) {
    throw DimensionMismatch("LinearOperator::apply: size mismatch");
  }
  for (std::size_t b = 0; b < blocks(); ++b) {
    const auto [first, last] = block_rows(b);
    apply_block(b, x, y.subspan(first, last - first));
  }
}

void LinearOperator::adjoint(std::span<const double> y, std::span<double> x) const {
  if (x.size() != cols() || y.size() != rows()) {
    throw DimensionMismatch("LinearOperator::adjoint: size mismatch");
  }
  std::fill(x.begin(), x.end(), 0.0);
  std::vector<double> part(cols());
  for (std::size_t b = 0; b < blocks(); ++b) {
    const auto [first, last] = block_rows(b);
    adjoint_block(b, y.subspan(first, last - first), part);
    for (std::size_t c = 0; c < x.size(); ++c) x[c] += part[c];
  }
}

DenseOperator::DenseOperator(std::size_t rows, std::size_t cols, std::vector<double> values,
                             std::size_t blocks)
    : rows_(rows), cols_(cols), blocks_(std::max<std::size_t>(1, blocks)),
      a_(std::move(values)) {
  if (a_.size() != rows_ * cols_) throw DimensionMismatch("DenseOperator: bad value count");
  if (blocks_ > rows_ && rows_ > 0) blocks_ = rows_;
}

std::pair<std::size_t, std::size_t> DenseOperator::block_rows(std::size_t b) const {
  return {rows_ * b / blocks_, rows_ * (b + 1) / blocks_};
}

void DenseOperator::apply_block(std::size_t b, std::span<const double> x,
                                std::span<double> y_block) const {
  const auto [first, last] = block_rows(b);
  for (std::size_t r = first; r < last; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols_; ++c) s += a_[r * cols_ + c] * x[c];
    y_block[r - first] = s;
  }
}

void DenseOperator::adjoint_block(std::size_t b, std::span<const double> y_block,
                                  std::span<double> x) const {
  const auto [first, last] = block_rows(b);
  std::fill(x.begin(), x.end(), 0.0);
  for (std::size_t r = first; r < last; ++r) {
    const double w = y_block[r - first];
    for (std::size_t c = 0; c < cols_; ++c) x[c] += a_[r * cols_ + c] * w;
  }
}

VoxelProjector::VoxelProjector(ConeBeamGeometry geometry, VolumeGrid grid)
    : geometry_(std::move(geometry)), grid_(grid) {
  geometry_.validate();
  grid_.validate();
  step_ = 0.5 * grid_.spacing.minCoeff();
}

std::pair<std::size_t, std::size_t> VoxelProjector::block_rows(std::size_t b) const {
  const std::size_t n = geometry_.pixels();
  return {b * n, (b + 1) * n};
}

template <class Visit>
void VoxelProjector::walk(std::size_t view, int i, int j, Visit&& visit) const {
  const Pose pose = geometry_.pose(view);
  const Ray ray = generate_ray(pose, geometry_.pixel_center(i, j));
  const Vec3 lo = grid_.lower_corner();
  const Vec3 hi = grid_.upper_corner();
  double t0 = ray.t_near, t1 = ray.t_far;
  for (int a = 0; a < 3; ++a) {
    const double d = ray.direction(a);
    const double o = ray.origin(a);
    if (std::abs(d) < 1e-300) {
      if (o < lo(a) || o > hi(a)) return;
      continue;
    }
    double ta = (lo(a) - o) / d;
    double tb = (hi(a) - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t1 > t0)) return;
  // Largest step <= spacing/2 that tiles [t0, t1] exactly.
  const double span = t1 - t0;
  const auto count = static_cast<long long>(std::ceil(span / step_));
  const double h = span / static_cast<double>(count);

  const int nx = grid_.dims[0], ny = grid_.dims[1], nz = grid_.dims[2];
  const int n[3] = {nx, ny, nz};
  for (long long k = 0; k < count; ++k) {
    const Vec3 p = ray.at(t0 + (static_cast<double>(k) + 0.5) * h);
    int base[3];
    double frac[3];
    for (int a = 0; a < 3; ++a) {
      double f = (p(a) - grid_.origin(a)) / grid_.spacing(a);
      f = std::clamp(f, 0.0, static_cast<double>(n[a] - 1));
      if (n[a] == 1) {
        base[a] = 0;
        frac[a] = 0.0;
        continue;
      }
      int b = static_cast<int>(std::floor(f));
      b = std::min(b, n[a] - 2);
      base[a] = b;
      frac[a] = f - b;
    }
    for (int c = 0; c < 8; ++c) {
      const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
      const double w = (dx ? frac[0] : 1.0 - frac[0]) * (dy ? frac[1] : 1.0 - frac[1]) *
                       (dz ? frac[2] : 1.0 - frac[2]);
      if (w == 0.0) continue;
      visit(grid_.index(base[0] + dx, base[1] + dy, base[2] + dz), w * h);
    }
  }
}

void VoxelProjector::apply_block(std::size_t b, std::span<const double> x,
                                 std::span<double> y_block) const {
  const int w = geometry_.width;
  parallel_for(static_cast<std::size_t>(geometry_.height), [&](std::size_t row) {
    const int j = static_cast<int>(row);
    for (int i = 0; i < w; ++i) {
      double s = 0.0;
      walk(b, i, j, [&](std::size_t idx, double weight) { s += weight * x[idx]; });
      y_block[static_cast<std::size_t>(j) * w + i] = s;
    }
  });
}

void VoxelProjector::adjoint_block(std::size_t b, std::span<const double> y_block,
                                   std::span<double> x) const {
  const int w = geometry_.width;
  const auto h = static_cast<std::size_t>(geometry_.height);
  const std::size_t chunks = std::min(kScatterChunks, h);
  std::vector<std::vector<double>> partial(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    std::vector<double>& acc = partial[c];
    acc.assign(x.size(), 0.0);
    for (std::size_t row = h * c / chunks; row < h * (c + 1) / chunks; ++row) {
      const int j = static_cast<int>(row);
      for (int i = 0; i < w; ++i) {
        const double v = y_block[row * w + i];
        if (v == 0.0) continue;
        walk(b, i, j, [&](std::size_t idx, double weight) { acc[idx] += weight * v; });
      }
    }
  });
  std::fill(x.begin(), x.end(), 0.0);
  for (const auto& acc : partial) {
    for (std::size_t k = 0; k < x.size(); ++k) x[k] += acc[k];
  }
}

CglsResult cgls(const LinearOperator& op, std::span<const double> b, int iterations,
                std::span<const double> x0) {
  if (iterations < 1) throw InvalidParameter("cgls: iterations must be >= 1");
  if (b.size() != op.rows() || x0.size() != op.cols()) {
    throw DimensionMismatch("cgls: data or initial volume size mismatch");
  }
  CglsResult out;
  out.x.assign(x0.begin(), x0.end());
  std::vector<double> r(op.rows()), q(op.rows());
  std::vector<double> s(op.cols()), p(op.cols());

  op.apply(out.x, r);
  for (std::size_t k = 0; k < r.size(); ++k) r[k] = b[k] - r[k];
  op.adjoint(r, s);
  p = s;
  double gamma = simd::dot(s, s);
  out.residual_norms.push_back(norm2(r));

  for (int it = 0; it < iterations; ++it) {
    if (gamma == 0.0) break;
    op.apply(p, q);
    const double delta = simd::dot(q, q);
    if (delta == 0.0) break;
    const double alpha = gamma / delta;
    simd::axpy(alpha, p, out.x);
    simd::axpy(-alpha, q, r);
    out.residual_norms.push_back(norm2(r));
    op.adjoint(r, s);
    const double gamma_next = simd::dot(s, s);
    if (!std::isfinite(gamma_next) || !std::isfinite(alpha)) {
      throw NumericalError("cgls: non-finite iterate at iteration " + std::to_string(it));
    }
    const double beta = gamma_next / gamma;
    gamma = gamma_next;
    simd::xpby(s, beta, p);
  }
  require_finite(out.x, "cgls");
  return out;
}

SartResult sart(const LinearOperator& op, std::span<const double> b, int sweeps,
                double relaxation, std::span<const double> x0) {
  if (!(relaxation > 0.0 && relaxation < 2.0)) {
    throw InvalidParameter("sart: relaxation must lie in (0, 2)");
  }
  if (op.blocks() == 0 || op.rows() == 0) throw InvalidParameter("sart: empty view set");
  if (sweeps < 0) throw InvalidParameter("sart: sweeps must be >= 0");
  if (b.size() != op.rows() || x0.size() != op.cols()) {
    throw DimensionMismatch("sart: data or initial volume size mismatch");
  }
  SartResult out;
  out.x.assign(x0.begin(), x0.end());
  const std::size_t nb = op.blocks();
  const std::vector<double> ones_x(op.cols(), 1.0);

  // Row sums per block are small; column sums are cached while they fit.
  std::vector<std::vector<double>> row_sums(nb);
  const bool cache_cols = nb * op.cols() <= (std::size_t{1} << 24);
  std::vector<std::vector<double>> col_sums(cache_cols ? nb : 0);
  for (std::size_t blk = 0; blk < nb; ++blk) {
    const auto [first, last] = op.block_rows(blk);
    row_sums[blk].resize(last - first);
    op.apply_block(blk, ones_x, row_sums[blk]);
    if (cache_cols) {
      const std::vector<double> ones_y(last - first, 1.0);
      col_sums[blk].resize(op.cols());
      op.adjoint_block(blk, ones_y, col_sums[blk]);
    }
  }

  std::vector<double> back(op.cols()), colsum(op.cols());
  std::vector<double> all(op.rows());
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (std::size_t blk = 0; blk < nb; ++blk) {
      const auto [first, last] = op.block_rows(blk);
      std::vector<double> resid(last - first);
      op.apply_block(blk, out.x, resid);
      for (std::size_t k = 0; k < resid.size(); ++k) {
        const double rs = row_sums[blk][k];
        resid[k] = rs > 0.0 ? (b[first + k] - resid[k]) / rs : 0.0;
      }
      op.adjoint_block(blk, resid, back);
      const std::vector<double>* cs = nullptr;
      if (cache_cols) {
        cs = &col_sums[blk];
      } else {
        const std::vector<double> ones_y(last - first, 1.0);
        op.adjoint_block(blk, ones_y, colsum);
        cs = &colsum;
      }
      for (std::size_t c = 0; c < out.x.size(); ++c) {
        const double w = (*cs)[c];
        if (w > 0.0) out.x[c] += relaxation * back[c] / w;
      }
    }
    for (double& v : out.x) v = std::max(v, 0.0);
    require_finite(out.x, "sart");
    op.apply(out.x, all);
    for (std::size_t k = 0; k < all.size(); ++k) all[k] = b[k] - all[k];
    out.residual_norms.push_back(norm2(all));
  }
  return out;
}

namespace {

struct TvField {
  std::vector<double> gx, gy, gz, norm;
};

TvField tv_field(const VoxelVolume& v, double eps) {
  const auto& d = v.grid.dims;
  TvField f;
  const std::size_t n = v.values.size();
  f.gx.assign(n, 0.0);
  f.gy.assign(n, 0.0);
  f.gz.assign(n, 0.0);
  f.norm.assign(n, 0.0);
  for (int k = 0; k < d[2]; ++k) {
    for (int j = 0; j < d[1]; ++j) {
      for (int i = 0; i < d[0]; ++i) {
        const std::size_t idx = v.grid.index(i, j, k);
        const double x = v.values[idx];
        const double gx = i + 1 < d[0] ? v.values[v.grid.index(i + 1, j, k)] - x : 0.0;
        const double gy = j + 1 < d[1] ? v.values[v.grid.index(i, j + 1, k)] - x : 0.0;
        const double gz = k + 1 < d[2] ? v.values[v.grid.index(i, j, k + 1)] - x : 0.0;
        f.gx[idx] = gx;
        f.gy[idx] = gy;
        f.gz[idx] = gz;
        f.norm[idx] = std::sqrt(gx * gx + gy * gy + gz * gz + eps);
      }
    }
  }
  return f;
}

double tv_of(const TvField& f, double eps) {
  double total = 0.0;
  for (double n : f.norm) total += n - std::sqrt(eps);
  return total;
}

}  // namespace

double total_variation(const VoxelVolume& volume, double eps) {
  return tv_of(tv_field(volume, eps), eps);
}

VoxelVolume tv_denoise(const VoxelVolume& volume, int steps, double step_size) {
  if (!(step_size > 0.0)) throw InvalidParameter("tv_denoise: step_size must be positive");
  constexpr double eps = 1e-8;
  VoxelVolume x = volume;
  const auto& d = x.grid.dims;
  std::vector<double> grad(x.values.size());
  for (int s = 0; s < steps; ++s) {
    const TvField f = tv_field(x, eps);
    const double tv0 = tv_of(f, eps);
    double gmax = 0.0;
    for (int k = 0; k < d[2]; ++k) {
      for (int j = 0; j < d[1]; ++j) {
        for (int i = 0; i < d[0]; ++i) {
          const std::size_t idx = x.grid.index(i, j, k);
          double g = -(f.gx[idx] + f.gy[idx] + f.gz[idx]) / f.norm[idx];
          if (i > 0) {
            const std::size_t m = x.grid.index(i - 1, j, k);
            g += f.gx[m] / f.norm[m];
          }
          if (j > 0) {
            const std::size_t m = x.grid.index(i, j - 1, k);
            g += f.gy[m] / f.norm[m];
          }
          if (k > 0) {
            const std::size_t m = x.grid.index(i, j, k - 1);
            g += f.gz[m] / f.norm[m];
          }
          grad[idx] = g;
          gmax = std::max(gmax, std::abs(g));
        }
      }
    }
    if (gmax == 0.0) break;
    double alpha = step_size / gmax;
    VoxelVolume trial = x;
    bool accepted = false;
    for (int halving = 0; halving < 30; ++halving) {
      for (std::size_t idx = 0; idx < x.values.size(); ++idx) {
        trial.values[idx] = x.values[idx] - alpha * grad[idx];
      }
      if (total_variation(trial, eps) <= tv0) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
    x.values.swap(trial.values);
  }
  return x;
}

std::vector<double> flatten(const ProjectionStack& stack) {
  std::vector<double> b;
  b.reserve(stack.views.size() * stack.geometry.pixels());
  for (const DetectorImage& img : stack.views) {
    if (img.width != stack.geometry.width || img.height != stack.geometry.height) {
      throw DimensionMismatch("projection stack: view raster does not match the geometry");
    }
    b.insert(b.end(), img.values.begin(), img.values.end());
  }
  return b;
}

namespace {

void check_stack(const ProjectionStack& stack) {
  if (stack.views.empty()) throw InvalidParameter("reconstruction: empty projection stack");
  if (stack.views.size() != stack.geometry.views()) {
    throw DimensionMismatch("reconstruction: view count differs from the angle list");
  }
}

void clamp_nonnegative(std::vector<double>& v) {
  for (double& x : v) x = std::max(x, 0.0);
}

}  // namespace

VoxelVolume cgls(const ProjectionStack& stack, int iterations, const VoxelVolume& volume0) {
  check_stack(stack);
  const VoxelProjector op(stack.geometry, volume0.grid);
  const std::vector<double> b = flatten(stack);
  VoxelVolume out(volume0.grid);
  out.values = cgls(op, b, iterations, volume0.values).x;
  clamp_nonnegative(out.values);
  return out;
}

VoxelVolume sart(const ProjectionStack& stack, int sweeps, double relaxation,
                 const VoxelVolume& volume0) {
  check_stack(stack);
  const VoxelProjector op(stack.geometry, volume0.grid);
  const std::vector<double> b = flatten(stack);
  VoxelVolume out(volume0.grid);
  out.values = sart(op, b, sweeps, relaxation, volume0.values).x;
  return out;
}

VoxelVolume hybrid_init(const ProjectionStack& stack, const HybridSchedule& schedule,
                        const VolumeGrid& grid) {
  check_stack(stack);
  if (schedule.cgls_iterations < 0 || schedule.sart_sweeps < 0 || schedule.tv_steps < 0) {
    throw InvalidParameter("hybrid_init: schedule entries must be >= 0");
  }
  const VoxelProjector op(stack.geometry, grid);
  const std::vector<double> b = flatten(stack);
  VoxelVolume x(grid);
  if (schedule.cgls_iterations > 0) {
    x.values = cgls(op, b, schedule.cgls_iterations, x.values).x;
  }
  auto tv = [&](int steps) {
    if (steps <= 0) return;
    const double peak = x.max_value();
    if (peak > 0.0) x = tv_denoise(x, steps, schedule.tv_step_fraction * peak);
  };
  if (schedule.interleave_tv && schedule.sart_sweeps > 0) {
    int done = 0;
    for (int s = 0; s < schedule.sart_sweeps; ++s) {
      x.values = sart(op, b, 1, schedule.sart_relaxation, x.values).x;
      const int target = schedule.tv_steps * (s + 1) / schedule.sart_sweeps;
      tv(target - done);
      done = target;
    }
  } else {
    if (schedule.sart_sweeps > 0) {
      x.values = sart(op, b, schedule.sart_sweeps, schedule.sart_relaxation, x.values).x;
    }
    tv(schedule.tv_steps);
  }
  clamp_nonnegative(x.values);
  return x;
}

ReconMethod parse_recon_method(const std::string& name) {
  if (name == "sart") return ReconMethod::sart;
  if (name == "cgls+tv" || name == "cgls_tv") return ReconMethod::cgls_tv;
  throw ConfigError("unknown reconstruction method '" + name + "' (expected sart or cgls+tv)");
}

const char* recon_method_name(ReconMethod m) {
  return m == ReconMethod::sart ? "sart" : "cgls+tv";
}

VoxelVolume recon_ct(const ProjectionStack& stack, ReconMethod method, const VolumeGrid& grid,
                     const ReconOptions& options) {
  check_stack(stack);
  if (stack.views.size() < 2) throw InvalidParameter("recon_ct: need at least 2 views");
  const VoxelProjector op(stack.geometry, grid);
  const std::vector<double> b = flatten(stack);
  VoxelVolume x(grid);
  if (method == ReconMethod::sart) {
    x.values = sart(op, b, options.sart_sweeps, options.sart_relaxation, x.values).x;
  } else {
    x.values = cgls(op, b, options.cgls_iterations, x.values).x;
    clamp_nonnegative(x.values);
    const double peak = x.max_value();
    if (options.tv_steps > 0 && peak > 0.0) {
      x = tv_denoise(x, options.tv_steps, options.tv_step_fraction * peak);
    }
  }
  clamp_nonnegative(x.values);
  return x;
}

}  // namespace xfield
