#pragma once

// Optimizable raster maps. Texels are stored as unconstrained logits and
// decoded to colours (sigmoid) or tangent-space unit normals.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "errors.hpp"
#include "types.hpp"

namespace meshforge {

enum class TexelKind { color, normal };

struct TexelMap {
  int width = 0;
  int height = 0;
  TexelKind kind = TexelKind::color;
  std::vector<double> data;  // height * width * 3 logits, row 0 = top (v = 1)

  TexelMap() = default;
  TexelMap(int w, int h, TexelKind k) : width(w), height(h), kind(k), data(std::size_t(w) * h * 3, 0.0) {
    if (w <= 0 || h <= 0) throw ParameterError("texel map dimensions must be positive");
  }

  std::size_t texel_count() const { return std::size_t(width) * height; }
  bool same_shape(const TexelMap& o) const { return width == o.width && height == o.height; }
};

// Decoded values with the same layout as TexelMap::data.
struct DecodedMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  DecodedMap() = default;
  DecodedMap(int w, int h) : width(w), height(h), values(std::size_t(w) * h * 3, 0.0) {}

  Vec3 texel(int x, int y) const {
    const double* p = &values[(std::size_t(y) * width + x) * 3];
    return {p[0], p[1], p[2]};
  }
};

// Normal texels decode as normalize(2 sigmoid(a) - 1, 2 sigmoid(b) - 1, sigmoid(c)),
// which keeps z strictly positive.
inline Vec3 decode_normal(double a, double b, double c) {
  return Vec3(2 * sigmoid(a) - 1, 2 * sigmoid(b) - 1, sigmoid(c)).normalized();
}

inline DecodedMap decode(const TexelMap& map) {
  DecodedMap out(map.width, map.height);
  const std::size_t n = map.texel_count();
  if (map.kind == TexelKind::color) {
    for (std::size_t i = 0; i < 3 * n; ++i) out.values[i] = sigmoid(map.data[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 v = decode_normal(map.data[3 * i], map.data[3 * i + 1], map.data[3 * i + 2]);
      for (int c = 0; c < 3; ++c) out.values[3 * i + c] = v[c];
    }
  }
  return out;
}

// Chains a gradient w.r.t. decoded values back to the logits.
inline TexelMap decode_backward(const TexelMap& map, const DecodedMap& grad) {
  if (grad.width != map.width || grad.height != map.height)
    throw ParameterError("decode_backward: gradient shape does not match map");
  TexelMap out(map.width, map.height, map.kind);
  const std::size_t n = map.texel_count();
  if (map.kind == TexelKind::color) {
    for (std::size_t i = 0; i < 3 * n; ++i) {
      const double s = sigmoid(map.data[i]);
      out.data[i] = grad.values[i] * s * (1 - s);
    }
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double sa = sigmoid(map.data[3 * i]), sb = sigmoid(map.data[3 * i + 1]), sc = sigmoid(map.data[3 * i + 2]);
    const Vec3 raw(2 * sa - 1, 2 * sb - 1, sc);
    const double norm = raw.norm();
    const Vec3 g(grad.values[3 * i], grad.values[3 * i + 1], grad.values[3 * i + 2]);
    const Vec3 draw = normalize_backward(g, raw / norm, norm);
    out.data[3 * i] = draw[0] * 2 * sa * (1 - sa);
    out.data[3 * i + 1] = draw[1] * 2 * sb * (1 - sb);
    out.data[3 * i + 2] = draw[2] * sc * (1 - sc);
  }
  return out;
}

// Inverse of decode, used when loading 8-bit maps back into logits.
// Colours are clamped away from 0/1; normals are forced into z > 0.
inline TexelMap encode(const DecodedMap& decoded, TexelKind kind) {
  TexelMap out(decoded.width, decoded.height, kind);
  const std::size_t n = std::size_t(decoded.width) * decoded.height;
  constexpr double eps = 1e-4;
  if (kind == TexelKind::color) {
    for (std::size_t i = 0; i < 3 * n; ++i) out.data[i] = logit(std::clamp(decoded.values[i], eps, 1 - eps));
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 v(decoded.values[3 * i], decoded.values[3 * i + 1], decoded.values[3 * i + 2]);
    v.z() = std::max(v.z(), eps);
    // scale so that the largest component stays inside the decodable range
    const double m = std::max({std::abs(v.x()), std::abs(v.y()), v.z()});
    v *= (1 - eps) / m;
    out.data[3 * i] = logit(std::clamp((v.x() + 1) / 2, eps, 1 - eps));
    out.data[3 * i + 1] = logit(std::clamp((v.y() + 1) / 2, eps, 1 - eps));
    out.data[3 * i + 2] = logit(std::clamp(v.z(), eps, 1 - eps));
  }
  return out;
}

inline TexelMap constant_color_map(int w, int h, const Vec3& color) {
  DecodedMap d(w, h);
  for (std::size_t i = 0; i < std::size_t(w) * h; ++i)
    for (int c = 0; c < 3; ++c) d.values[3 * i + c] = color[c];
  return encode(d, TexelKind::color);
}

// All-zero xy logits decode to exactly (0, 0, 1).
inline TexelMap flat_normal_map(int w, int h) {
  TexelMap m(w, h, TexelKind::normal);
  for (std::size_t i = 0; i < m.texel_count(); ++i) m.data[3 * i + 2] = 2.0;
  return m;
}

// The four texels and weights of one bilinear lookup, plus the lookup's
// derivative w.r.t. uv (per tap, so callers can contract with any value).
struct BilinearTaps {
  std::array<std::size_t, 4> index{};  // texel offsets (x + y * width)
  std::array<double, 4> weight{};
  std::array<double, 4> dweight_du{};
  std::array<double, 4> dweight_dv{};
};

// Texel-centre convention: texel (x, y) is centred at
// u = (x + 0.5) / width, v = 1 - (y + 0.5) / height.
inline BilinearTaps bilinear_taps(int width, int height, const Vec2& uv, bool wrap_u) {
  const double x = uv.x() * width - 0.5;
  const double y = (1.0 - uv.y()) * height - 0.5;
  const double xf = std::floor(x), yf = std::floor(y);
  const double fx = x - xf, fy = y - yf;
  long long x0 = (long long)xf, x1 = x0 + 1, y0 = (long long)yf, y1 = y0 + 1;
  if (wrap_u) {
    x0 = ((x0 % width) + width) % width;
    x1 = ((x1 % width) + width) % width;
  } else {
    x0 = std::clamp<long long>(x0, 0, width - 1);
    x1 = std::clamp<long long>(x1, 0, width - 1);
  }
  y0 = std::clamp<long long>(y0, 0, height - 1);
  y1 = std::clamp<long long>(y1, 0, height - 1);
  BilinearTaps t;
  t.index = {std::size_t(y0 * width + x0), std::size_t(y0 * width + x1), std::size_t(y1 * width + x0),
             std::size_t(y1 * width + x1)};
  t.weight = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  // dx/du = width, dy/dv = -height
  const double W = width, H = height;
  t.dweight_du = {-(1 - fy) * W, (1 - fy) * W, -fy * W, fy * W};
  t.dweight_dv = {(1 - fx) * H, fx * H, -(1 - fx) * H, -fx * H};
  return t;
}

inline Vec3 gather(const DecodedMap& map, const BilinearTaps& t) {
  Vec3 out = Vec3::Zero();
  for (int k = 0; k < 4; ++k) {
    const double* p = &map.values[3 * t.index[k]];
    out += t.weight[k] * Vec3(p[0], p[1], p[2]);
  }
  return out;
}

inline Vec3 sample_bilinear(const DecodedMap& map, const Vec2& uv, bool wrap_u = false) {
  return gather(map, bilinear_taps(map.width, map.height, uv, wrap_u));
}

// Random logits: colours ~ N(0, color_sigma^2); normals get N(0, normal_sigma^2)
// on x/y and a fixed z logit so they decode close to (0, 0, 1).
inline TexelMap random_color_map(int w, int h, double sigma, std::mt19937_64& rng) {
  TexelMap m(w, h, TexelKind::color);
  std::normal_distribution<double> dist(0.0, sigma);
  for (double& x : m.data) x = dist(rng);
  return m;
}

inline TexelMap random_normal_map(int w, int h, double sigma, std::mt19937_64& rng) {
  TexelMap m = flat_normal_map(w, h);
  std::normal_distribution<double> dist(0.0, sigma);
  for (std::size_t i = 0; i < m.texel_count(); ++i) {
    m.data[3 * i] = dist(rng);
    m.data[3 * i + 1] = dist(rng);
  }
  return m;
}

}  // namespace meshforge
