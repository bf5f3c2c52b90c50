#include "xfield/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <json.hpp>
#include <sstream>

#include "xfield/error.hpp"
#include "xfield/io.hpp"
#include "xfield/rng.hpp"

namespace xfield {

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"run.seed", "0", "root seed; every stage draws from a named substream"},
      {"run.threads", "0", "worker cap, 0 = hardware concurrency"},

      {"geometry.source_to_origin", "5", "source to rotation centre distance"},
      {"geometry.source_to_detector", "10", "source to detector distance"},
      {"geometry.detector_u", "4", "detector width (world units)"},
      {"geometry.detector_v", "4", "detector height (world units)"},
      {"geometry.width", "64", "detector columns"},
      {"geometry.height", "64", "detector rows"},
      {"geometry.source_intensity", "1", "I0 for linear-intensity export"},

      {"render.culling", "obb", "obb | aabb | none"},
      {"render.lengths", "corrected", "corrected | raw | constant_one"},
      {"render.rule", "containment_aware", "containment_aware | first_pass"},
      {"render.tile", "8", "tile edge in pixels"},

      {"phantom.dims", "64", "voxelization edge length"},
      {"phantom.random_k", "16", "ellipsoid count of the random-k preset"},

      {"init.grid", "32", "init volume edge length (voxels)"},
      {"init.half_extent", "1", "init volume covers [-h, h]^3"},
      {"init.cgls_iterations", "20", ""},
      {"init.sart_sweeps", "5", ""},
      {"init.sart_relaxation", "1", ""},
      {"init.tv_steps", "30", ""},
      {"init.tv_step_fraction", "0.01", "TV step as a fraction of the volume maximum"},
      {"init.interleave_tv", "false", "spread TV steps between SART sweeps"},
      {"init.threshold", "0", "absolute seed density threshold"},
      {"init.threshold_relative", "0.1", "seed threshold as a fraction of the volume maximum"},
      {"init.count", "4000", "maximum number of seed points"},
      {"init.sigma_mode", "voxel", "voxel | constant"},
      {"init.constant_sigma", "0.05", "sigma for sigma_mode = constant"},

      {"train.iterations", "1500", ""},
      {"train.lambda_dssim", "0.25", ""},
      {"train.lr_position", "2e-4", ""},
      {"train.lr_position_final", "2e-5", "position rate at the last iteration"},
      {"train.lr_sigma", "1e-2", ""},
      {"train.lr_scale", "5e-3", ""},
      {"train.lr_rotation", "1e-3", ""},
      {"train.prune_threshold", "1e-5", ""},
      {"train.densify_interval", "100", "0 disables geometry densification"},
      {"train.densify_start", "150", ""},
      {"train.densify_end", "750", ""},
      {"train.material_start", "1100", ""},
      {"train.material_interval", "100", "0 disables material densification"},
      {"train.max_ellipsoids", "500000", ""},
      {"train.split_divisor", "1.6", ""},
      {"train.grad_threshold", "2e-3", ""},
      {"train.clone_extent_fraction", "0.02", ""},
      {"train.knn_k", "8", ""},
      {"train.material_subset", "0.1", ""},
      {"train.checkpoint_interval", "0", "0 = no checkpoints"},

      {"recon.method", "cgls+tv", "sart | cgls+tv"},
      {"recon.grid", "64", "output volume edge length"},
      {"recon.half_extent", "1", ""},
      {"recon.sart_sweeps", "20", ""},
      {"recon.sart_relaxation", "1", ""},
      {"recon.cgls_iterations", "30", ""},
      {"recon.tv_steps", "20", ""},
      {"recon.tv_step_fraction", "0.005", ""},

      {"metric.data_range", "0", "0 = maximum of the reference"},
      {"metric.unit_range", "false", "force data range 1"},
  };
  return keys;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value, const std::string& origin) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(origin + ": unknown key '" + key + "'");
  it->second = value;
}

void RunConfig::set_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), "command line");
}

void RunConfig::load_text(const std::string& text, const std::string& origin, bool json) {
  if (json) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(origin + ": malformed JSON: " + e.what());
    }
    if (!j.is_object()) throw ConfigError(origin + ": top level must be an object of sections");
    for (const auto& [section, body] : j.items()) {
      if (!body.is_object()) {
        throw ConfigError(origin + ": section '" + section + "' must be an object");
      }
      for (const auto& [key, v] : body.items()) {
        std::string s;
        if (v.is_string()) {
          s = v.get<std::string>();
        } else if (v.is_number() || v.is_boolean()) {
          s = v.dump();
        } else {
          throw ConfigError(origin + ": key '" + section + "." + key + "' must be a scalar");
        }
        set(section + "." + key, s, origin);
      }
    }
    return;
  }
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (key.find('.') == std::string::npos) {
      if (section.empty()) throw ConfigError(where + ": key '" + key + "' outside a section");
      key = section + "." + key;
    }
    set(key, trim(line.substr(eq + 1)), where);
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw ConfigError(path.string() + ": config file not found");
  }
  const std::string text = io::read_text(path);
  const std::string t = trim(text);
  const bool json = path.extension() == ".json" || (!t.empty() && t.front() == '{');
  load_text(text, path.string(), json);
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  std::int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  }
  return out;
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
}

std::uint64_t RunConfig::seed() const {
  const std::int64_t s = get_int("run.seed");
  if (s < 0) throw ConfigError("key 'run.seed': must be >= 0");
  return static_cast<std::uint64_t>(s);
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "# resolved configuration\n";
  std::string section;
  for (const auto& k : config_keys()) {
    const std::string name = k.name;
    const auto dot = name.find('.');
    const std::string s = name.substr(0, dot);
    if (s != section) {
      os << (section.empty() ? "" : "\n") << '[' << s << "]\n";
      section = s;
    }
    os << name.substr(dot + 1) << " = " << get(name) << '\n';
  }
  return os.str();
}

namespace {

template <class Fn>
auto checked(const char* section, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("section [") + section + "]: " + e.what());
  }
}

int as_int(const RunConfig& c, const char* key) { return static_cast<int>(c.get_int(key)); }

}  // namespace

ConeBeamGeometry RunConfig::geometry() const {
  ConeBeamGeometry g;
  g.source_to_origin = get_double("geometry.source_to_origin");
  g.source_to_detector = get_double("geometry.source_to_detector");
  g.detector_u = get_double("geometry.detector_u");
  g.detector_v = get_double("geometry.detector_v");
  g.width = as_int(*this, "geometry.width");
  g.height = as_int(*this, "geometry.height");
  g.source_intensity = get_double("geometry.source_intensity");
  checked("geometry", [&] {
    g.validate();
    return 0;
  });
  return g;
}

RenderOptions RunConfig::render_options() const {
  RenderOptions o;
  o.culling = parse_culling(get("render.culling"));
  const std::string& lengths = get("render.lengths");
  if (lengths == "corrected") {
    o.lengths = LengthMode::corrected;
  } else if (lengths == "raw") {
    o.lengths = LengthMode::raw;
  } else if (lengths == "constant_one") {
    o.lengths = LengthMode::constant_one;
  } else {
    throw ConfigError("key 'render.lengths': unknown mode '" + lengths + "'");
  }
  const std::string& rule = get("render.rule");
  if (rule == "containment_aware") {
    o.rule = SegmentRule::containment_aware;
  } else if (rule == "first_pass") {
    o.rule = SegmentRule::first_pass;
  } else {
    throw ConfigError("key 'render.rule': unknown rule '" + rule + "'");
  }
  o.tile = as_int(*this, "render.tile");
  if (o.tile < 1) throw ConfigError("key 'render.tile': must be >= 1");
  return o;
}

HybridSchedule RunConfig::hybrid_schedule() const {
  HybridSchedule s;
  s.cgls_iterations = as_int(*this, "init.cgls_iterations");
  s.sart_sweeps = as_int(*this, "init.sart_sweeps");
  s.sart_relaxation = get_double("init.sart_relaxation");
  s.tv_steps = as_int(*this, "init.tv_steps");
  s.tv_step_fraction = get_double("init.tv_step_fraction");
  s.interleave_tv = get_bool("init.interleave_tv");
  return s;
}

VolumeGrid RunConfig::init_grid() const {
  return checked("init", [&] {
    return VolumeGrid::cube(as_int(*this, "init.grid"), get_double("init.half_extent"));
  });
}

SeedConfig RunConfig::seed_config(double volume_max) const {
  SeedConfig s;
  s.threshold = std::max(get_double("init.threshold"),
                         get_double("init.threshold_relative") * std::max(volume_max, 0.0));
  const std::int64_t count = get_int("init.count");
  if (count < 1) throw ConfigError("key 'init.count': must be >= 1");
  s.count = static_cast<std::size_t>(count);
  s.seed = substream_seed(seed(), "init");
  s.sigma_mode = parse_sigma_mode(get("init.sigma_mode"));
  s.constant_sigma = get_double("init.constant_sigma");
  checked("init", [&] {
    s.validate();
    return 0;
  });
  return s;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.iterations = as_int(*this, "train.iterations");
  t.lambda_dssim = get_double("train.lambda_dssim");
  t.lr_position = get_double("train.lr_position");
  t.lr_position_final = get_double("train.lr_position_final");
  t.lr_sigma = get_double("train.lr_sigma");
  t.lr_scale = get_double("train.lr_scale");
  t.lr_rotation = get_double("train.lr_rotation");
  t.prune_threshold = get_double("train.prune_threshold");
  t.densify_interval = as_int(*this, "train.densify_interval");
  t.densify_start = as_int(*this, "train.densify_start");
  t.densify_end = as_int(*this, "train.densify_end");
  t.material_start = as_int(*this, "train.material_start");
  t.material_interval = as_int(*this, "train.material_interval");
  const std::int64_t cap = get_int("train.max_ellipsoids");
  if (cap < 1) throw ConfigError("key 'train.max_ellipsoids': must be >= 1");
  t.max_ellipsoids = static_cast<std::size_t>(cap);
  t.split_divisor = get_double("train.split_divisor");
  t.grad_threshold = get_double("train.grad_threshold");
  t.clone_extent_fraction = get_double("train.clone_extent_fraction");
  const std::int64_t k = get_int("train.knn_k");
  if (k < 1) throw ConfigError("key 'train.knn_k': must be >= 1");
  t.knn_k = static_cast<std::size_t>(k);
  t.material_subset = get_double("train.material_subset");
  t.checkpoint_interval = as_int(*this, "train.checkpoint_interval");
  t.seed = substream_seed(seed(), "train");
  t.render = render_options();
  checked("train", [&] {
    t.validate();
    return 0;
  });
  return t;
}

ReconOptions RunConfig::recon_options() const {
  ReconOptions o;
  o.sart_sweeps = as_int(*this, "recon.sart_sweeps");
  o.sart_relaxation = get_double("recon.sart_relaxation");
  o.cgls_iterations = as_int(*this, "recon.cgls_iterations");
  o.tv_steps = as_int(*this, "recon.tv_steps");
  o.tv_step_fraction = get_double("recon.tv_step_fraction");
  return o;
}

ReconMethod RunConfig::recon_method() const { return parse_recon_method(get("recon.method")); }

VolumeGrid RunConfig::recon_grid() const {
  return checked("recon", [&] {
    return VolumeGrid::cube(as_int(*this, "recon.grid"), get_double("recon.half_extent"));
  });
}

double RunConfig::metric_range() const {
  if (get_bool("metric.unit_range")) return 1.0;
  const double r = get_double("metric.data_range");
  if (r < 0.0) throw ConfigError("key 'metric.data_range': must be >= 0");
  return r;
}

}  // namespace xfield
