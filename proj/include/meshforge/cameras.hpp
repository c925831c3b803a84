#pragma once

// Stochastic view sampling and camera construction.
//
// Azimuth is uniform on [0, 360), elevation is 100 deg * Beta(1, 5) measured
// up from the horizontal plane, and the camera orbits the origin at a fixed
// distance with +y up. FOV jitter, look-at offsets and random backgrounds
// are independent augmentations that can each be switched off.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"
#include "types.hpp"

namespace meshforge {

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

enum class BackgroundKind { solid, noise, checkerboard, fixed };

inline std::string_view to_string(BackgroundKind k) {
  switch (k) {
    case BackgroundKind::solid: return "solid";
    case BackgroundKind::noise: return "noise";
    case BackgroundKind::checkerboard: return "checkerboard";
    case BackgroundKind::fixed: return "fixed";
  }
  return "?";
}

struct BackgroundSpec {
  BackgroundKind kind = BackgroundKind::fixed;
  std::uint64_t seed = 0;
  Vec3 color{1.0, 1.0, 1.0};  // used by `fixed` only
};

struct ViewSample {
  double azimuth = 0;    // degrees, [0, 360)
  double elevation = 0;  // degrees, [0, 100]
  double fov = 45;       // degrees, [30, 60]
  double distance = 5.0;
  Vec2 offset = Vec2::Zero();  // look-at shift along the camera's right/up axes
  BackgroundSpec background;
};

struct ViewConfig {
  double distance = 5.0;
  double elevation_max = 100.0;
  double beta_alpha = 1.0;
  double beta_beta = 5.0;
  double fov_min = 30.0;
  double fov_max = 60.0;
  double fixed_fov = 45.0;
  double offset_fraction = 0.1;  // offset range r = fraction * distance
  bool fov_augment = true;
  bool offset_augment = true;
  bool background_augment = true;
  Vec3 fixed_background{1.0, 1.0, 1.0};
};

struct CameraPose {
  Vec3 position = Vec3(0, 0, 5);
  Vec3 look_at = Vec3::Zero();
  Vec3 up = Vec3::UnitY();
  double fov = 45;  // vertical, degrees
  double near = 0.1;
  double far = 100.0;
};

// Orthonormal camera basis. Camera space: x right, y up, z forward (depth).
struct CameraFrame {
  Vec3 eye, right, up, forward;
  double focal = 1.0;  // 1 / tan(fov / 2)
  double near = 0.1;
  double far = 100.0;

  static CameraFrame from_pose(const CameraPose& pose) {
    const Vec3 dir = pose.look_at - pose.position;
    if (!(dir.norm() > 1e-12)) throw ParameterError("degenerate camera: position equals look-at point");
    if (!(pose.fov > 0 && pose.fov < 180)) throw ParameterError("camera fov must be in (0, 180) degrees");
    CameraFrame f;
    f.eye = pose.position;
    f.forward = dir.normalized();
    const Vec3 r = f.forward.cross(pose.up);
    if (!(r.norm() > 1e-9)) throw ParameterError("degenerate camera: up vector parallel to view direction");
    f.right = r.normalized();
    f.up = f.right.cross(f.forward);
    f.focal = 1.0 / std::tan(deg2rad(pose.fov) / 2);
    f.near = pose.near;
    f.far = pose.far;
    return f;
  }

  Vec3 to_camera(const Vec3& p) const {
    const Vec3 d = p - eye;
    return {right.dot(d), up.dot(d), forward.dot(d)};
  }
};

// Beta(a, b) via the gamma ratio.
inline double sample_beta(std::mt19937_64& rng, double a, double b) {
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  return x / (x + y);
}

// Every draw happens regardless of the augmentation toggles, so turning one
// off leaves the other fields of the stream unchanged.
inline ViewSample sample_view(std::mt19937_64& rng, const ViewConfig& cfg) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ViewSample v;
  v.azimuth = 360.0 * unit(rng);
  if (v.azimuth >= 360.0) v.azimuth = 0.0;
  v.elevation = std::clamp(cfg.elevation_max * sample_beta(rng, cfg.beta_alpha, cfg.beta_beta), 0.0, cfg.elevation_max);
  const double fov = cfg.fov_min + (cfg.fov_max - cfg.fov_min) * unit(rng);
  const double r = cfg.offset_fraction * cfg.distance;
  const Vec2 offset(r * (2 * unit(rng) - 1), r * (2 * unit(rng) - 1));
  const int kind = std::min(int(3 * unit(rng)), 2);
  const std::uint64_t bg_seed = rng();
  v.distance = cfg.distance;
  v.fov = cfg.fov_augment ? std::clamp(fov, cfg.fov_min, cfg.fov_max) : cfg.fixed_fov;
  v.offset = cfg.offset_augment ? offset : Vec2::Zero();
  if (cfg.background_augment) {
    v.background.kind = static_cast<BackgroundKind>(kind);
    v.background.seed = bg_seed;
  } else {
    v.background.kind = BackgroundKind::fixed;
    v.background.color = cfg.fixed_background;
  }
  return v;
}

// position = distance * (cos(el) sin(az), sin(el), cos(el) cos(az)); past
// 85 deg the up hint follows the elevation tangent so the orbit continues
// over the zenith.
inline CameraPose camera_pose(const ViewSample& view) {
  const double az = deg2rad(view.azimuth), el = deg2rad(view.elevation);
  CameraPose pose;
  pose.position = view.distance * Vec3(std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az));
  pose.fov = view.fov;
  const Vec3 tangent(-std::sin(el) * std::sin(az), std::cos(el), -std::sin(el) * std::cos(az));
  const Vec3 up_hint = view.elevation > 85.0 ? tangent : Vec3::UnitY();
  const Vec3 forward = (-pose.position).normalized();
  const Vec3 right = forward.cross(up_hint).normalized();
  const Vec3 up = right.cross(forward);
  pose.look_at = view.offset.x() * right + view.offset.y() * up;
  pose.up = view.elevation > 85.0 ? up : Vec3::UnitY();
  return pose;
}

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, int(std::ceil(3 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& x : k) x /= sum;
  return k;
}

// Separable blur, clamp-to-edge.
inline void blur_rgb(Image& img, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = int(k.size() / 2);
  std::vector<double> tmp(img.rgb.size());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double s = 0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * img.at(std::clamp(x + i, 0, img.width - 1), y, c);
        tmp[(std::size_t(y) * img.width + x) * 3 + c] = s;
      }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double s = 0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * tmp[(std::size_t(std::clamp(y + i, 0, img.height - 1)) * img.width + x) * 3 + c];
        img.at(x, y, c) = s;
      }
}

}  // namespace detail

inline Image make_background(const BackgroundSpec& spec, int resolution, std::mt19937_64& rng) {
  if (resolution <= 0) throw ParameterError("background resolution must be positive");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto color = [&] {
    const double r = unit(rng), g = unit(rng), b = unit(rng);
    return Vec3(r, g, b);
  };
  Image img(resolution, resolution);
  switch (spec.kind) {
    case BackgroundKind::fixed: img = Image::solid(resolution, resolution, spec.color); break;
    case BackgroundKind::solid: img = Image::solid(resolution, resolution, color()); break;
    case BackgroundKind::noise:
      for (double& x : img.rgb) x = unit(rng);
      detail::blur_rgb(img, resolution / 16.0);
      break;
    case BackgroundKind::checkerboard: {
      const Vec3 a = color(), b = color();
      const int cell = std::max(1, resolution / 8);
      for (int y = 0; y < resolution; ++y)
        for (int x = 0; x < resolution; ++x) {
          const Vec3& c = ((x / cell + y / cell) % 2 == 0) ? a : b;
          for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = c[ch];
        }
      break;
    }
  }
  std::fill(img.alpha.begin(), img.alpha.end(), 1.0);
  return img;
}

// Reproducible from the spec alone.
inline Image make_background(const BackgroundSpec& spec, int resolution) {
  std::mt19937_64 rng(spec.seed);
  return make_background(spec, resolution, rng);
}

}  // namespace meshforge
