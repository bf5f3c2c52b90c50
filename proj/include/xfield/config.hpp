#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xfield/cone_beam.hpp"
#include "xfield/optimizer.hpp"
#include "xfield/recon.hpp"
#include "xfield/seeding.hpp"

namespace xfield {

struct ConfigKey {
  const char* name;  // "section.key"
  const char* default_value;
  const char* help;
};

/// Every key the pipeline understands, with its default.
const std::vector<ConfigKey>& config_keys();

/// Flat "section.key" -> value map over the documented keys. Files are
/// either sectioned key = value text:
///
///   [train]
///   iterations = 1500   # comment
///
/// or a JSON object of sections. Unknown sections or keys are rejected.
class RunConfig {
 public:
  RunConfig();  // all defaults

  /// Merges a file on top of the current values.
  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text, const std::string& origin, bool json);
  /// "section.key=value"
  void set_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value, const std::string& origin);

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::uint64_t seed() const;

  /// Resolved configuration in the sectioned text format.
  std::string to_text() const;

  ConeBeamGeometry geometry() const;  // angles left empty
  RenderOptions render_options() const;
  HybridSchedule hybrid_schedule() const;
  VolumeGrid init_grid() const;
  SeedConfig seed_config(double volume_max) const;
  TrainConfig train_config() const;
  ReconOptions recon_options() const;
  ReconMethod recon_method() const;
  VolumeGrid recon_grid() const;
  double metric_range() const;  // 0 = reference maximum

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace xfield
