#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

namespace meshforge {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

// n x 3 vertex positions, one vertex per row.
using Positions = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

// Vertex-index triple, counter-clockwise when seen from outside.
using Face = std::array<int, 3>;

inline double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

inline double sigmoid(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Backward of y = x / |x|: returns dL/dx given dL/dy and y, |x|.
inline Vec3 normalize_backward(const Vec3& grad_y, const Vec3& y, double norm) {
  return (grad_y - y * y.dot(grad_y)) / norm;
}

// RGB raster with soft coverage. Row 0 is the top of the picture.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;    // height * width * 3, row-major
  std::vector<double> alpha;  // height * width

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(std::size_t(w) * h * 3, 0.0), alpha(std::size_t(w) * h, 0.0) {}

  static Image solid(int w, int h, const Vec3& color) {
    Image img(w, h);
    for (std::size_t i = 0; i < img.alpha.size(); ++i)
      for (int c = 0; c < 3; ++c) img.rgb[3 * i + c] = color[c];
    return img;
  }

  std::size_t pixel_count() const { return std::size_t(width) * height; }
  double& at(int x, int y, int c) { return rgb[(std::size_t(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const { return rgb[(std::size_t(y) * width + x) * 3 + c]; }
  Vec3 pixel(int x, int y) const {
    const double* p = &rgb[(std::size_t(y) * width + x) * 3];
    return {p[0], p[1], p[2]};
  }
};

}  // namespace meshforge
