// xfield command-line pipeline: phantom -> project -> init -> train -> render
// / recon-ct -> eval. Exit codes: 0 success, 1 runtime failure, 2 bad
// configuration or missing input.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "xfield/config.hpp"
#include "xfield/error.hpp"
#include "xfield/io.hpp"
#include "xfield/metrics.hpp"
#include "xfield/parallel.hpp"
#include "xfield/phantom.hpp"
#include "xfield/projector.hpp"
#include "xfield/recon.hpp"
#include "xfield/rng.hpp"
#include "xfield/seeding.hpp"

namespace fs = std::filesystem;
using namespace xfield;

namespace {

struct Globals {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

RunConfig load_config(const Globals& g, const std::string& extra_config = {}) {
  RunConfig c;
  if (!g.config.empty()) c.load_file(g.config);
  if (!extra_config.empty()) c.load_file(extra_config);
  for (const auto& o : g.overrides) c.set_override(o);
  if (g.seed) c.set("run.seed", std::to_string(*g.seed), "--seed");
  if (g.threads) c.set("run.threads", std::to_string(*g.threads), "--threads");
  const auto threads = c.get_int("run.threads");
  if (threads < 0) throw ConfigError("key 'run.threads': must be >= 0");
  if (threads > 0) set_thread_count(static_cast<int>(threads));
  return c;
}

void require_dataset(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw ConfigError(std::string(what) + " not found: " + path);
  if (!io::is_dataset(path)) {
    throw ConfigError(std::string(what) + " is not a dataset directory (no manifest.json): " +
                      path);
  }
}

void echo_config(const fs::path& out, const RunConfig& c) {
  io::write_text(out / "config.resolved.ini", c.to_text());
}

// "a:b" in degrees.
std::pair<double, double> parse_range(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw ConfigError("--range must look like start:end (degrees)");
  try {
    return {std::stod(s.substr(0, colon)), std::stod(s.substr(colon + 1))};
  } catch (const std::exception&) {
    throw ConfigError("--range: cannot parse '" + s + "'");
  }
}

std::vector<double> parse_angles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item) * std::numbers::pi / 180.0);
    } catch (const std::exception&) {
      throw ConfigError("--angles: cannot parse '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("--angles: no angles given");
  return out;
}

void write_pngs(const fs::path& dir, const ProjectionStack& stack) {
  double hi = 0.0;
  for (const auto& v : stack.views) {
    for (double x : v.values) hi = std::max(hi, x);
  }
  for (std::size_t v = 0; v < stack.views.size(); ++v) {
    char name[32];
    std::snprintf(name, sizeof name, "view_%04zu.png", v);
    io::write_png16(dir / "png" / name, stack.views[v], 0.0, hi > 0.0 ? hi : 1.0);
  }
  io::write_text(dir / "png" / "mapping.txt",
                 "value = " + std::to_string(hi > 0.0 ? hi : 1.0) + " * pixel / 65535\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xfield: ellipsoid attenuation fields for sparse-view X-ray synthesis"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "configuration file (sectioned key = value or JSON)");
  app.add_option("--set", g.overrides, "override, section.key=value (repeatable)");
  app.add_option("--seed", g.seed, "root RNG seed (run.seed)");
  app.add_option("--threads", g.threads, "worker cap (run.threads)");

  // phantom
  auto* phantom = app.add_subcommand("phantom", "write an analytic phantom and its voxelization");
  std::string preset, phantom_out;
  phantom->add_option("--preset", preset, "two-material-slab | nested-shells | random-k | overlap-pair")
      ->required();
  phantom->add_option("--out", phantom_out, "output directory")->required();

  // project
  auto* project = app.add_subcommand("project", "render training projections of a scene");
  std::string project_scene, project_geometry, project_out, project_range = "0:180";
  int project_views = 10;
  bool project_png = false;
  project->add_option("--scene", project_scene, "ellipsoid set directory")->required();
  project->add_option("--geometry", project_geometry, "config file with a [geometry] section");
  project->add_option("--views", project_views, "number of views")->check(CLI::PositiveNumber);
  project->add_option("--range", project_range, "angular range start:end in degrees (end excluded)");
  project->add_option("--out", project_out, "output stack directory")->required();
  project->add_flag("--png", project_png, "also write 16-bit PNGs");

  // init
  auto* init = app.add_subcommand("init", "hybrid CGLS/SART/TV volume and seeded ellipsoids");
  std::string init_stack, init_out;
  init->add_option("--stack", init_stack, "training stack directory")->required();
  init->add_option("--out", init_out, "output ellipsoid set directory")->required();

  // train
  auto* trainc = app.add_subcommand("train", "fit the ellipsoid set to the training stack");
  std::string train_stack, train_init, train_config, train_out;
  trainc->add_option("--stack", train_stack, "training stack directory")->required();
  trainc->add_option("--init", train_init, "initial ellipsoid set directory")->required();
  trainc->add_option("--config", train_config, "training config file (merged after --config)");
  trainc->add_option("--out", train_out, "output directory")->required();

  // render
  auto* render = app.add_subcommand("render", "render novel views of a scene");
  std::string render_scene, render_geometry, render_angles, render_out;
  int render_orbit = 0;
  bool render_png = false;
  render->add_option("--scene", render_scene, "ellipsoid set directory")->required();
  render->add_option("--geometry", render_geometry, "config file with a [geometry] section");
  auto* angles_opt = render->add_option("--angles", render_angles, "comma-separated degrees");
  auto* orbit_opt =
      render->add_option("--orbit", render_orbit, "n views over 360 deg about the principal axis");
  angles_opt->excludes(orbit_opt);
  render->add_option("--out", render_out, "output stack directory")->required();
  render->add_flag("--png", render_png, "also write 16-bit PNGs");

  // recon-ct
  auto* ct = app.add_subcommand("recon-ct", "render dense views of a scene and reconstruct a volume");
  std::string ct_scene, ct_out, ct_method;
  int ct_views = 100;
  ct->add_option("--scene", ct_scene, "ellipsoid set directory")->required();
  ct->add_option("--views", ct_views, "number of views over 0:180")->check(CLI::PositiveNumber);
  ct->add_option("--method", ct_method, "sart | cgls+tv (recon.method)");
  ct->add_option("--out", ct_out, "output volume directory")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "PSNR / SSIM between two stacks or two volumes");
  std::string eval_pred, eval_ref, eval_report;
  eval->add_option("--pred", eval_pred, "predicted stack or volume")->required();
  eval->add_option("--ref", eval_ref, "reference stack or volume")->required();
  eval->add_option("--report", eval_report, "CSV report path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*phantom) {
      const RunConfig c = load_config(g);
      const auto spec = make_phantom(preset, substream_seed(c.seed(), "phantom"),
                                     static_cast<int>(c.get_int("phantom.random_k")));
      PhantomSpec s = spec;
      s.dims = static_cast<int>(c.get_int("phantom.dims"));
      io::write_scene(phantom_out, s.scene);
      io::write_volume(fs::path(phantom_out) / "volume", voxelize(s));
      echo_config(phantom_out, c);
      std::cout << "phantom " << s.name << ": " << s.scene.size() << " ellipsoids -> "
                << phantom_out << "\n";
    } else if (*project) {
      require_dataset(project_scene, "scene");
      if (!project_geometry.empty() && !fs::is_regular_file(project_geometry)) {
        throw ConfigError("geometry file not found: " + project_geometry);
      }
      const RunConfig c = load_config(g, project_geometry);
      const auto [a0, a1] = parse_range(project_range);
      ConeBeamGeometry geo = c.geometry();
      geo.angles = uniform_angles(static_cast<std::size_t>(project_views),
                                  a0 * std::numbers::pi / 180.0, a1 * std::numbers::pi / 180.0);
      const Scene scene = io::read_scene(project_scene);
      const ProjectionStack stack = render_stack(scene, geo, c.render_options());
      io::write_stack(project_out, stack);
      if (project_png) write_pngs(project_out, stack);
      echo_config(project_out, c);
      std::cout << "projected " << stack.views.size() << " views -> " << project_out << "\n";
    } else if (*init) {
      require_dataset(init_stack, "stack");
      const RunConfig c = load_config(g);
      const ProjectionStack stack = io::read_stack(init_stack);
      const VoxelVolume vol = hybrid_init(stack, c.hybrid_schedule(), c.init_grid());
      const Scene scene = seed_from_volume(vol, c.seed_config(vol.max_value()));
      io::write_scene(init_out, scene);
      io::write_volume(fs::path(init_out) / "volume", vol);
      echo_config(init_out, c);
      std::cout << "seeded " << scene.size() << " ellipsoids -> " << init_out << "\n";
    } else if (*trainc) {
      require_dataset(train_stack, "stack");
      require_dataset(train_init, "init scene");
      if (!train_config.empty() && !fs::is_regular_file(train_config)) {
        throw ConfigError("config file not found: " + train_config);
      }
      const RunConfig c = load_config(g, train_config);
      const TrainConfig tc = c.train_config();
      const ProjectionStack stack = io::read_stack(train_stack);
      const Scene init_scene = io::read_scene(train_init);
      const fs::path out = train_out;
      const TrainResult res =
          train(stack, init_scene, tc, [&](int it, const OptimizerState& st) {
            char name[32];
            std::snprintf(name, sizeof name, "iter_%06d", it);
            const fs::path dir = out / "checkpoints" / name;
            io::write_scene(dir, st.scene());
            io::write_optimizer(dir, st);
            echo_config(dir, c);
          });
      io::write_scene(out, res.scene);
      io::write_optimizer(out, res.state);
      io::write_text(out / "loss.csv", loss_log_csv(res.log));
      echo_config(out, c);
      std::cout << "trained " << res.log.size() << " iterations, " << res.scene.size()
                << " ellipsoids, final loss "
                << (res.log.empty() ? 0.0 : res.log.back().loss) << " -> " << train_out << "\n";
      if (res.nonfinite_drops > 0) {
        std::cout << "warning: " << res.nonfinite_drops
                  << " ellipsoid gradients were non-finite and skipped\n";
      }
    } else if (*render) {
      require_dataset(render_scene, "scene");
      if (!render_geometry.empty() && !fs::is_regular_file(render_geometry)) {
        throw ConfigError("geometry file not found: " + render_geometry);
      }
      if (render_angles.empty() && render_orbit <= 0) {
        throw ConfigError("render: give --angles or --orbit N");
      }
      const RunConfig c = load_config(g, render_geometry);
      const Scene scene = io::read_scene(render_scene);
      ConeBeamGeometry geo = c.geometry();
      if (render_orbit > 0) {
        geo = orbit_geometry(scene, geo, static_cast<std::size_t>(render_orbit));
      } else {
        geo.angles = parse_angles(render_angles);
      }
      const ProjectionStack stack = render_stack(scene, geo, c.render_options());
      io::write_stack(render_out, stack);
      if (render_png) write_pngs(render_out, stack);
      echo_config(render_out, c);
      std::cout << "rendered " << stack.views.size() << " views -> " << render_out << "\n";
    } else if (*ct) {
      require_dataset(ct_scene, "scene");
      RunConfig c = load_config(g);
      if (!ct_method.empty()) c.set("recon.method", ct_method, "--method");
      ConeBeamGeometry geo = c.geometry();
      geo.angles = uniform_angles(static_cast<std::size_t>(ct_views), 0.0, std::numbers::pi);
      const Scene scene = io::read_scene(ct_scene);
      const ProjectionStack stack = render_stack(scene, geo, c.render_options());
      const VoxelVolume vol =
          recon_ct(stack, c.recon_method(), c.recon_grid(), c.recon_options());
      io::write_volume(ct_out, vol);
      echo_config(ct_out, c);
      std::cout << "reconstructed " << vol.grid.dims[0] << "^3 volume from " << ct_views
                << " views (" << recon_method_name(c.recon_method()) << ") -> " << ct_out << "\n";
    } else if (*eval) {
      require_dataset(eval_pred, "prediction");
      require_dataset(eval_ref, "reference");
      const RunConfig c = load_config(g);
      const std::string kind_pred = io::read_text(fs::path(eval_pred) / "manifest.json");
      const bool volumes = kind_pred.find("xfield-volume") != std::string::npos;
      MetricReport rep;
      if (volumes) {
        rep = volume_metrics(io::read_volume(eval_pred), io::read_volume(eval_ref),
                             c.metric_range())
                  .report();
      } else {
        rep = stack_metrics(io::read_stack(eval_pred), io::read_stack(eval_ref),
                            c.metric_range());
      }
      io::write_text(eval_report, rep.to_csv());
      std::cout << rep.to_table();
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
