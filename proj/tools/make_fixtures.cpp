// Regenerates tests/fixtures: the ellipsoid target set, a saved asset
// directory and its golden render.
//
//   make_fixtures <fixtures-dir>

#include <cstdio>
#include <filesystem>
#include <random>

#include "meshforge/fixtures.hpp"
#include "meshforge/mesh_io.hpp"

using namespace meshforge;

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: %s <fixtures-dir>\n", argv[0]);
    return 2;
  }
  const std::filesystem::path root = argv[1];
  save_target_set(root / "ellipsoid", make_ellipsoid_target_set(64));

  Scene scene = make_ellipsoid_scene();
  std::mt19937_64 rng(11);
  scene.normal_map = random_normal_map(32, 32, 0.4, rng);
  save_assets(scene.mesh, scene.mesh.vertices, scene.texture, scene.normal_map, root / "asset");

  const Assets loaded = load_assets(root / "asset");
  ViewSample v;
  v.azimuth = 0;
  v.elevation = 15;
  v.fov = 45;
  RenderConfig cfg;
  cfg.resolution = 128;
  const auto out = render(loaded.mesh, Material::make(loaded.texture, loaded.normal_map), camera_pose(v),
                          Image::solid(128, 128, Vec3(1, 1, 1)), cfg);
  save_image_png(root / "asset_golden.png", out.image);
  std::printf("fixtures written to %s\n", root.string().c_str());
  return 0;
}
