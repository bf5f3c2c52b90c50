#include "xfield/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <vector>

#include "xfield/error.hpp"

namespace xfield::io {

static_assert(std::endian::native == std::endian::little,
              "raw payloads are written in host order; big-endian hosts are unsupported");

using json = nlohmann::json;

namespace {

constexpr int kRecordFloats = 11;

[[noreturn]] void fail(const fs::path& p, const std::string& what) {
  throw IoError(p.string() + ": " + what);
}

json read_manifest(const fs::path& dir, const std::string& kind) {
  const fs::path p = dir / "manifest.json";
  json j;
  try {
    j = json::parse(read_text(p));
  } catch (const json::exception& e) {
    fail(p, std::string("malformed manifest: ") + e.what());
  }
  if (!j.is_object() || j.value("format", "") != kind) {
    fail(p, "not a '" + kind + "' manifest");
  }
  if (j.value("endianness", "little") != "little") fail(p, "unsupported endianness");
  return j;
}

template <class T>
T field(const json& j, const char* key, const fs::path& p) {
  if (!j.contains(key)) fail(p, std::string("missing key '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(p, std::string("bad value for key '") + key + "'");
  }
}

void write_floats(const fs::path& p, const std::vector<double>& v) {
  std::vector<float> f(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) f[k] = static_cast<float>(v[k]);
  std::ofstream os(p, std::ios::binary);
  if (!os) fail(p, "cannot open for writing");
  os.write(reinterpret_cast<const char*>(f.data()),
           static_cast<std::streamsize>(f.size() * sizeof(float)));
  if (!os) fail(p, "write failed");
}

std::vector<double> read_floats(const fs::path& p, std::size_t count) {
  std::ifstream is(p, std::ios::binary);
  if (!is) fail(p, "cannot open for reading");
  is.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(is.tellg());
  if (size != count * sizeof(float)) {
    fail(p, "expected " + std::to_string(count * sizeof(float)) + " bytes, found " +
                std::to_string(size));
  }
  is.seekg(0);
  std::vector<float> f(count);
  is.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(size));
  if (!is) fail(p, "read failed");
  return std::vector<double>(f.begin(), f.end());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(dir, "cannot create directory: " + ec.message());
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const json& j, const char* key, const fs::path& p) {
  const auto a = field<std::vector<double>>(j, key, p);
  if (a.size() != 3) fail(p, std::string("key '") + key + "' needs 3 numbers");
  return Vec3(a[0], a[1], a[2]);
}

json geometry_json(const ConeBeamGeometry& g) {
  json frame = json::array();
  for (int r = 0; r < 3; ++r) frame.push_back(json::array({g.frame(r, 0), g.frame(r, 1), g.frame(r, 2)}));
  return json{{"source_to_origin", g.source_to_origin},
              {"source_to_detector", g.source_to_detector},
              {"detector_u", g.detector_u},
              {"detector_v", g.detector_v},
              {"width", g.width},
              {"height", g.height},
              {"source_intensity", g.source_intensity},
              {"frame", frame},
              {"center", vec_json(g.center)},
              {"angles", g.angles}};
}

ConeBeamGeometry geometry_from(const json& j, const fs::path& p) {
  ConeBeamGeometry g;
  g.source_to_origin = field<double>(j, "source_to_origin", p);
  g.source_to_detector = field<double>(j, "source_to_detector", p);
  g.detector_u = field<double>(j, "detector_u", p);
  g.detector_v = field<double>(j, "detector_v", p);
  g.width = field<int>(j, "width", p);
  g.height = field<int>(j, "height", p);
  g.source_intensity = j.value("source_intensity", 1.0);
  g.angles = field<std::vector<double>>(j, "angles", p);
  if (j.contains("frame")) {
    const auto rows = field<std::vector<std::vector<double>>>(j, "frame", p);
    if (rows.size() != 3) fail(p, "key 'frame' needs 3 rows");
    for (int r = 0; r < 3; ++r) {
      if (rows[r].size() != 3) fail(p, "key 'frame' needs 3 columns");
      for (int c = 0; c < 3; ++c) g.frame(r, c) = rows[r][c];
    }
  }
  if (j.contains("center")) g.center = vec_from(j, "center", p);
  try {
    g.validate();
  } catch (const Error& e) {
    fail(p, e.what());
  }
  return g;
}

std::string view_name(std::size_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "view_%04zu.raw", v);
  return buf;
}

}  // namespace

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(path, "cannot open for writing");
  os << text;
  if (!os) fail(path, "write failed");
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(path, "cannot open for reading");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

bool is_dataset(const fs::path& dir) { return fs::is_regular_file(dir / "manifest.json"); }

void write_stack(const fs::path& dir, const ProjectionStack& stack) {
  stack.geometry.validate();
  if (stack.views.size() != stack.geometry.views()) {
    throw DimensionMismatch("write_stack: view count differs from the angle list");
  }
  ensure_dir(dir);
  json files = json::array();
  for (std::size_t v = 0; v < stack.views.size(); ++v) {
    const DetectorImage& img = stack.views[v];
    if (img.width != stack.geometry.width || img.height != stack.geometry.height) {
      throw DimensionMismatch("write_stack: view raster differs from the geometry");
    }
    write_floats(dir / view_name(v), img.values);
    files.push_back(view_name(v));
  }
  const json m{{"format", "xfield-projections"},
               {"version", 1},
               {"endianness", "little"},
               {"dtype", "float32"},
               {"space", "log"},
               {"width", stack.geometry.width},
               {"height", stack.geometry.height},
               {"views", stack.views.size()},
               {"angles", stack.geometry.angles},
               {"geometry", geometry_json(stack.geometry)},
               {"files", files}};
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

ProjectionStack read_stack(const fs::path& dir) {
  const fs::path mp = dir / "manifest.json";
  const json m = read_manifest(dir, "xfield-projections");
  ProjectionStack s;
  s.geometry = geometry_from(field<json>(m, "geometry", mp), mp);
  const auto files = field<std::vector<std::string>>(m, "files", mp);
  if (files.size() != s.geometry.views()) fail(mp, "file list length differs from angle count");
  for (const auto& f : files) {
    DetectorImage img(s.geometry.width, s.geometry.height);
    img.values = read_floats(dir / f, s.geometry.pixels());
    s.views.push_back(std::move(img));
  }
  return s;
}

void write_volume(const fs::path& dir, const VoxelVolume& volume) {
  volume.grid.validate();
  if (volume.values.size() != volume.grid.voxels()) {
    throw DimensionMismatch("write_volume: value count does not match the grid");
  }
  ensure_dir(dir);
  write_floats(dir / "volume.raw", volume.values);
  const auto& g = volume.grid;
  const json m{{"format", "xfield-volume"},
               {"version", 1},
               {"endianness", "little"},
               {"dtype", "float32"},
               {"order", "x-fastest"},
               {"dims", {g.dims[0], g.dims[1], g.dims[2]}},
               {"spacing", vec_json(g.spacing)},
               {"origin", vec_json(g.origin)},
               {"file", "volume.raw"}};
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

VoxelVolume read_volume(const fs::path& dir) {
  const fs::path mp = dir / "manifest.json";
  const json m = read_manifest(dir, "xfield-volume");
  VolumeGrid g;
  const auto dims = field<std::vector<int>>(m, "dims", mp);
  if (dims.size() != 3) fail(mp, "key 'dims' needs 3 integers");
  g.dims = {dims[0], dims[1], dims[2]};
  g.spacing = vec_from(m, "spacing", mp);
  g.origin = vec_from(m, "origin", mp);
  try {
    g.validate();
  } catch (const Error& e) {
    fail(mp, e.what());
  }
  VoxelVolume v(g);
  v.values = read_floats(dir / m.value("file", "volume.raw"), g.voxels());
  return v;
}

void write_scene(const fs::path& dir, const Scene& scene) {
  ensure_dir(dir);
  std::vector<double> rec;
  rec.reserve(scene.size() * kRecordFloats);
  for (const Ellipsoid& e : scene) {
    e.validate();
    rec.insert(rec.end(), {e.center.x(), e.center.y(), e.center.z(), e.scale.x(), e.scale.y(),
                           e.scale.z(), e.rotation.w(), e.rotation.x(), e.rotation.y(),
                           e.rotation.z(), e.sigma});
  }
  write_floats(dir / "ellipsoids.raw", rec);
  const json m{{"format", "xfield-ellipsoids"},
               {"version", 1},
               {"endianness", "little"},
               {"dtype", "float32"},
               {"count", scene.size()},
               {"record", {"cx", "cy", "cz", "sx", "sy", "sz", "qw", "qx", "qy", "qz", "sigma"}},
               {"file", "ellipsoids.raw"}};
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

Scene read_scene(const fs::path& dir) {
  const fs::path mp = dir / "manifest.json";
  const json m = read_manifest(dir, "xfield-ellipsoids");
  const auto count = field<std::size_t>(m, "count", mp);
  const fs::path data = dir / m.value("file", "ellipsoids.raw");
  const auto rec = read_floats(data, count * kRecordFloats);
  Scene s(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double* r = rec.data() + i * kRecordFloats;
    Ellipsoid& e = s[i];
    e.center = Vec3(r[0], r[1], r[2]);
    e.scale = Vec3(r[3], r[4], r[5]);
    e.rotation = Quat(r[6], r[7], r[8], r[9]);
    if (!(e.rotation.norm() > 0.0)) fail(data, "zero quaternion in record " + std::to_string(i));
    e.rotation.normalize();
    e.sigma = r[10];
    try {
      e.validate();
    } catch (const Error& err) {
      fail(data, "record " + std::to_string(i) + ": " + err.what());
    }
  }
  return s;
}

void write_optimizer(const fs::path& dir, const OptimizerState& state) {
  ensure_dir(dir);
  const fs::path p = dir / "moments.raw";
  std::ofstream os(p, std::ios::binary);
  if (!os) fail(p, "cannot open for writing");
  for (std::size_t i = 0; i < state.size(); ++i) {
    os.write(reinterpret_cast<const char*>(state.m1[i].data()), sizeof(double) * 11);
    os.write(reinterpret_cast<const char*>(state.m2[i].data()), sizeof(double) * 11);
  }
  if (!os) fail(p, "write failed");
  const json m{{"format", "xfield-optimizer"}, {"version", 1},          {"endianness", "little"},
               {"dtype", "float64"},           {"count", state.size()}, {"step", state.step},
               {"beta1", 0.9},                 {"beta2", 0.999},        {"eps", 1e-15},
               {"file", "moments.raw"}};
  write_text(dir / "optimizer.json", m.dump(2) + "\n");
}

void read_optimizer(const fs::path& dir, OptimizerState& state) {
  const fs::path mp = dir / "optimizer.json";
  json m;
  try {
    m = json::parse(read_text(mp));
  } catch (const json::exception& e) {
    fail(mp, std::string("malformed sidecar: ") + e.what());
  }
  if (m.value("format", "") != "xfield-optimizer") fail(mp, "not an optimizer sidecar");
  const auto count = field<std::size_t>(m, "count", mp);
  if (count != state.size()) fail(mp, "moment count differs from the ellipsoid set");
  const fs::path p = dir / m.value("file", "moments.raw");
  std::ifstream is(p, std::ios::binary);
  if (!is) fail(p, "cannot open for reading");
  state.m1.resize(count);
  state.m2.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    is.read(reinterpret_cast<char*>(state.m1[i].data()), sizeof(double) * 11);
    is.read(reinterpret_cast<char*>(state.m2[i].data()), sizeof(double) * 11);
  }
  if (!is) fail(p, "truncated moment file");
  state.step = field<std::int64_t>(m, "step", mp);
}

namespace {

// libpng error handling longjmps, so this frame holds no values that the
// caller needs afterwards.
bool encode_png16(FILE* fp, int width, int height, const std::vector<unsigned char>& pixels) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 16,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * 2;
  for (int j = 0; j < height; ++j) {
    png_write_row(png, const_cast<unsigned char*>(pixels.data() + j * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace

void write_png16(const fs::path& path, const DetectorImage& image, double lo, double hi) {
  if (image.width < 1 || image.height < 1) throw InvalidParameter("write_png16: empty image");
  if (!(hi > lo)) {
    lo = *std::min_element(image.values.begin(), image.values.end());
    hi = *std::max_element(image.values.begin(), image.values.end());
    if (!(hi > lo)) hi = lo + 1.0;
  }
  std::vector<unsigned char> pixels(image.size() * 2);
  for (std::size_t k = 0; k < image.size(); ++k) {
    const double t = std::clamp((image.values[k] - lo) / (hi - lo), 0.0, 1.0);
    const auto v = static_cast<std::uint16_t>(std::lround(t * 65535.0));
    pixels[2 * k] = static_cast<unsigned char>(v >> 8);  // PNG samples are big-endian
    pixels[2 * k + 1] = static_cast<unsigned char>(v & 0xff);
  }
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) fail(path, "cannot open for writing");
  const bool ok = encode_png16(fp, image.width, image.height, pixels);
  std::fclose(fp);
  if (!ok) fail(path, "PNG encoding failed");
}

}  // namespace xfield::io
