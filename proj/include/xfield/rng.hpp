#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "xfield/types.hpp"

namespace xfield {

/// Seed for a named substream of `root`. Streams with different names are
/// decorrelated, so adding a consumer never shifts another consumer's draws.
std::uint64_t substream_seed(std::uint64_t root, std::string_view name);
std::uint64_t substream_seed(std::uint64_t root, std::string_view name, std::uint64_t index);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t root, std::string_view name) : engine_(substream_seed(root, name)) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal (Box-Muller).
  double normal();
  /// Uniform random rotation (Shoemake).
  Quat unit_quaternion();
  /// Uniform point in the unit ball.
  Vec3 in_unit_ball();

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace xfield
