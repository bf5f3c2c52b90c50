#include "xfield/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "xfield/error.hpp"
#include "xfield/parallel.hpp"
#include "xfield/rng.hpp"

namespace xfield {

Preset parse_preset(const std::string& name) {
  if (name == "two-material-slab") return Preset::two_material_slab;
  if (name == "nested-shells") return Preset::nested_shells;
  if (name == "random-k") return Preset::random_k;
  if (name == "overlap-pair") return Preset::overlap_pair;
  throw ConfigError("unknown phantom preset '" + name + "'");
}

const char* preset_name(Preset p) {
  switch (p) {
    case Preset::two_material_slab: return "two-material-slab";
    case Preset::nested_shells: return "nested-shells";
    case Preset::random_k: return "random-k";
    case Preset::overlap_pair: return "overlap-pair";
  }
  return "?";
}

std::vector<std::string> preset_names() {
  return {"two-material-slab", "nested-shells", "random-k", "overlap-pair"};
}

void PhantomSpec::validate() const {
  if (scene.empty()) throw InvalidParameter("phantom: at least one ellipsoid required");
  for (const auto& e : scene) e.validate();
  if (dims < 8) throw InvalidParameter("phantom: voxelization dims must be >= 8");
}

namespace {

Ellipsoid blob(Vec3 c, Vec3 s, Quat q, double sigma) {
  Ellipsoid e;
  e.center = c;
  e.scale = s;
  e.rotation = q.normalized();
  e.sigma = sigma;
  return e;
}

Quat axis_angle(const Vec3& axis, double angle) {
  return Quat(Eigen::AngleAxisd(angle, axis.normalized()));
}

Scene slab_scene() {
  return {
      blob({-0.27, 0.0, 0.0}, {0.25, 0.65, 0.65}, Quat::Identity(), 0.3),
      blob({0.27, 0.0, 0.0}, {0.25, 0.65, 0.65}, Quat::Identity(), 0.9),
  };
}

Scene shells_scene(std::uint64_t seed) {
  Rng rng(seed, "phantom-shells");
  Scene s;
  s.push_back(blob(Vec3::Zero(), Vec3::Constant(0.2), Quat::Identity(), 1.0));
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (int i = 0; i < 6; ++i) {
    const double a = phase + 2.0 * std::numbers::pi * i / 6.0;
    const Vec3 c(0.45 * std::cos(a), 0.45 * std::sin(a), 0.0);
    s.push_back(blob(c, {0.09, 0.16, 0.3}, axis_angle(Vec3::UnitZ(), a), 0.6));
  }
  for (int i = 0; i < 10; ++i) {
    const double a = phase + 2.0 * std::numbers::pi * (i + 0.5) / 10.0;
    const Vec3 c(0.72 * std::cos(a), 0.72 * std::sin(a), 0.0);
    s.push_back(blob(c, {0.07, 0.15, 0.45}, axis_angle(Vec3::UnitZ(), a), 0.3));
  }
  return s;
}

Scene random_scene(std::uint64_t seed, int k) {
  if (k < 1) throw InvalidParameter("random-k: k must be >= 1");
  Rng rng(seed, "phantom-random-k");
  Scene s;
  int attempts = 0;
  while (static_cast<int>(s.size()) < k) {
    if (++attempts > 100000) {
      throw InvalidParameter("random-k: cannot place " + std::to_string(k) +
                             " disjoint ellipsoids");
    }
    const Vec3 scale(rng.uniform(0.12, 0.26), rng.uniform(0.12, 0.26), rng.uniform(0.12, 0.26));
    const double r = scale.maxCoeff();
    const double lim = 0.85 - r;
    const Vec3 c(rng.uniform(-lim, lim), rng.uniform(-lim, lim), rng.uniform(-lim, lim));
    bool ok = true;
    for (const auto& e : s) {
      // Bounding spheres apart with a small gap: disjoint by construction.
      if ((e.center - c).norm() < e.scale.maxCoeff() + r + 0.02) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    s.push_back(blob(c, scale, rng.unit_quaternion(), rng.uniform(0.2, 1.0)));
  }
  return s;
}

Scene overlap_scene(std::uint64_t seed) {
  Rng rng(seed, "phantom-overlap");
  const double a = rng.uniform(-0.3, 0.3);
  return {
      blob({0.18, 0.02, 0.0}, {0.38, 0.28, 0.3}, axis_angle(Vec3::UnitZ(), a), 0.5),
      blob({-0.16, -0.03, 0.04}, {0.3, 0.36, 0.28}, axis_angle(Vec3(1, 1, 0), 0.4 + a), 1.0),
  };
}

}  // namespace

PhantomSpec make_phantom(Preset preset, std::uint64_t seed, int random_k) {
  PhantomSpec spec;
  spec.name = preset_name(preset);
  spec.seed = seed;
  switch (preset) {
    case Preset::two_material_slab: spec.scene = slab_scene(); break;
    case Preset::nested_shells: spec.scene = shells_scene(seed); break;
    case Preset::random_k: spec.scene = random_scene(seed, random_k); break;
    case Preset::overlap_pair: spec.scene = overlap_scene(seed); break;
  }
  spec.validate();
  return spec;
}

PhantomSpec make_phantom(const std::string& preset, std::uint64_t seed, int random_k) {
  return make_phantom(parse_preset(preset), seed, random_k);
}

VoxelVolume voxelize(const Scene& scene, const VolumeGrid& grid) {
  grid.validate();
  struct Prepared {
    Vec3 c;
    Mat3 inv;
    Vec3 lo, hi;
    double sigma;
  };
  std::vector<Prepared> prep;
  prep.reserve(scene.size());
  for (const auto& e : scene) {
    e.validate();
    const Covariance cov = covariance(e);
    // Axis-aligned bounds: half-width along axis a is sqrt(Sigma_aa).
    const Vec3 half = cov.matrix.diagonal().cwiseSqrt();
    prep.push_back({e.center, cov.inverse, e.center - half, e.center + half, e.sigma});
  }
  VoxelVolume vol(grid);
  const auto& d = grid.dims;
  parallel_for(static_cast<std::size_t>(d[2]), [&](std::size_t kz) {
    const int k = static_cast<int>(kz);
    for (int j = 0; j < d[1]; ++j) {
      for (int i = 0; i < d[0]; ++i) {
        const Vec3 p = grid.voxel_center(i, j, k);
        for (const auto& e : prep) {
          if ((p.array() < e.lo.array()).any() || (p.array() > e.hi.array()).any()) continue;
          const Vec3 r = p - e.c;
          if (r.dot(e.inv * r) <= 1.0) {
            vol.at(i, j, k) = e.sigma;
            break;
          }
        }
      }
    }
  });
  return vol;
}

VoxelVolume voxelize(const PhantomSpec& spec) {
  spec.validate();
  return voxelize(spec.scene, spec.grid());
}

}  // namespace xfield
