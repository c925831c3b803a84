#pragma once

// Target image sets for the built-in scorer, and the procedural scenes used
// to build them.
//
// A target set is a directory with PNG views and a `cameras.txt` sidecar:
//
//   # meshforge target set v1
//   background 0.25 0.5 0.75
//   view_00.png 0 10 45 5        <- file azimuth elevation fov distance
//   ...

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cameras.hpp"
#include "errors.hpp"
#include "image_io.hpp"
#include "mesh.hpp"
#include "objective.hpp"
#include "raster.hpp"

namespace meshforge {

struct TargetView {
  std::string file;
  ViewSample camera;
};

struct TargetSet {
  Vec3 background{1, 1, 1};
  std::vector<TargetView> views;
  std::vector<Image> images;

  int resolution() const { return images.empty() ? 0 : images[0].width; }

  std::vector<RenderView> render_views() const {
    std::vector<RenderView> out;
    for (std::size_t i = 0; i < views.size(); ++i)
      out.push_back({camera_pose(views[i].camera), Image::solid(resolution(), resolution(), background), int(i)});
    return out;
  }
};

inline TargetSet load_target_set(const std::filesystem::path& dir) {
  const auto sidecar = dir / "cameras.txt";
  std::ifstream in(sidecar);
  if (!in) throw IoError("target set '" + dir.string() + "' has no readable cameras.txt");
  TargetSet set;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line != "# meshforge target set v1") throw ParseError("expected header '# meshforge target set v1'", lineno);
      header = true;
      continue;
    }
    std::istringstream ss(line);
    std::string head;
    if (!(ss >> head) || head[0] == '#') continue;
    if (head == "background") {
      double r, g, b;
      if (!(ss >> r >> g >> b)) throw ParseError("background needs three values", lineno);
      set.background = Vec3(r, g, b);
      continue;
    }
    TargetView v;
    v.file = head;
    if (!(ss >> v.camera.azimuth >> v.camera.elevation >> v.camera.fov >> v.camera.distance))
      throw ParseError("view line needs: file azimuth elevation fov distance", lineno);
    std::string extra;
    if (ss >> extra) throw ParseError("trailing text '" + extra + "'", lineno);
    if (v.camera.elevation < 0 || v.camera.elevation > 100) throw ParseError("elevation out of [0, 100]", lineno);
    if (!(v.camera.fov > 0 && v.camera.fov < 180)) throw ParseError("fov out of (0, 180)", lineno);
    if (!(v.camera.distance > 0)) throw ParseError("distance must be positive", lineno);
    set.views.push_back(v);
  }
  if (!header) throw ParseError("empty cameras.txt", 0);
  if (set.views.empty()) throw ParseError("target set lists no views", 0);
  for (const TargetView& v : set.views) {
    Image img = load_image_png(dir / v.file);
    if (img.width != img.height) throw ParameterError("target '" + v.file + "' is not square");
    if (!set.images.empty() && img.width != set.images[0].width)
      throw ParameterError("target '" + v.file + "' differs in size from the first target");
    set.images.push_back(std::move(img));
  }
  return set;
}

inline void save_target_set(const std::filesystem::path& dir, const TargetSet& set) {
  if (set.views.size() != set.images.size()) throw ParameterError("save_target_set: views/images count mismatch");
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "cameras.txt");
  if (!out) throw IoError("cannot write '" + (dir / "cameras.txt").string() + "'");
  char buf[256];
  out << "# meshforge target set v1\n";
  std::snprintf(buf, sizeof buf, "background %.9g %.9g %.9g\n", set.background[0], set.background[1], set.background[2]);
  out << buf;
  for (std::size_t i = 0; i < set.views.size(); ++i) {
    const auto& c = set.views[i].camera;
    std::snprintf(buf, sizeof buf, "%s %.9g %.9g %.9g %.9g\n", set.views[i].file.c_str(), c.azimuth, c.elevation, c.fov,
                  c.distance);
    out << buf;
    save_image_png(dir / set.views[i].file, set.images[i]);
  }
}

struct Scene {
  ControlMesh mesh;
  TexelMap texture;
  TexelMap normal_map;
};

// Ellipsoid with semi-axes (0.9, 1.2, 0.7): upper half red, lower half blue.
inline Scene make_ellipsoid_scene() {
  Scene s;
  s.mesh = make_icosphere(3);
  const Vec3 axes(0.9, 1.2, 0.7);
  for (Eigen::Index i = 0; i < s.mesh.vertices.rows(); ++i)
    s.mesh.vertices.row(i) = s.mesh.vertices.row(i).cwiseProduct(axes.transpose());
  DecodedMap d(64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const Vec3 c = y < 32 ? Vec3(0.85, 0.3, 0.2) : Vec3(0.2, 0.35, 0.8);
      for (int k = 0; k < 3; ++k) d.values[(std::size_t(y) * 64 + x) * 3 + k] = c[k];
    }
  s.texture = encode(d, TexelKind::color);
  s.normal_map = flat_normal_map(4, 4);
  return s;
}

// Mid-gray shape scenes for primitive selection checks.
inline Scene make_gray_scene(ControlMesh mesh) {
  return {std::move(mesh), constant_color_map(4, 4, Vec3(0.5, 0.5, 0.5)), flat_normal_map(4, 4)};
}

// 12 orbit views: azimuth 0..330 step 30, elevation alternating 10/30.
inline std::vector<ViewSample> orbit_cameras(int count = 12, double fov = 45, double distance = 5) {
  std::vector<ViewSample> out;
  for (int i = 0; i < count; ++i) {
    ViewSample v;
    v.azimuth = 360.0 * i / count;
    v.elevation = i % 2 == 0 ? 10.0 : 30.0;
    v.fov = fov;
    v.distance = distance;
    out.push_back(v);
  }
  return out;
}

inline TargetSet render_target_set(const Scene& scene, const std::vector<ViewSample>& cameras, int resolution,
                                   const Vec3& background, const RenderConfig& base = {}) {
  RenderConfig cfg = base;
  cfg.resolution = resolution;
  const auto material = Material::make(scene.texture, scene.normal_map);
  const Image bg = Image::solid(resolution, resolution, background);
  TargetSet set;
  set.background = background;
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "view_%02zu.png", i);
    set.views.push_back({name, cameras[i]});
    Image img = render(scene.mesh, material, camera_pose(cameras[i]), bg, cfg).image;
    // targets live as 8-bit PNGs; keep in-memory sets identical to reloaded ones
    set.images.push_back(from_rgb8(to_rgb8(img)));
  }
  return set;
}

inline TargetSet make_ellipsoid_target_set(int resolution = 64) {
  return render_target_set(make_ellipsoid_scene(), orbit_cameras(), resolution, Vec3(0.25, 0.5, 0.75));
}

}  // namespace meshforge
