#pragma once

// Differentiable soft rasterizer.
//
// Forward: perspective projection, z-buffered nearest triangle per pixel,
// perspective-correct barycentrics, bilinear texture and normal-map lookups,
// smooth vertex normals perturbed in a per-face tangent frame, Lambertian
// shading, and a soft silhouette
//
//   alpha = sigmoid(sdist / sigma)
//
// where sdist is the signed screen distance (NDC units, positive inside) to
// the nearest silhouette edge. Pixels just outside the object take the
// shading of the silhouette face at the closest point on that edge, so the
// composite alpha * shaded + (1 - alpha) * background is continuous across
// the silhouette. Beyond `coverage_cutoff` sigmas coverage is exactly 0 or 1.
//
// Backward: exact reverse mode of the above, piecewise (which triangle
// covers a pixel and which edge is nearest are treated as constants).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "cameras.hpp"
#include "errors.hpp"
#include "mesh.hpp"
#include "texel_map.hpp"
#include "types.hpp"

namespace meshforge {

struct Light {
  Vec3 direction;  // towards the light
  double intensity = 0;
};

struct RenderConfig {
  int resolution = 224;
  double sigma = 0.02;           // soft-edge width, NDC units
  double coverage_cutoff = 10.0;  // in sigmas
  std::vector<Light> lights{{Vec3(1, 1, 1).normalized(), 0.5}, {Vec3(-1, 0.5, -1).normalized(), 0.35}};
  double ambient = 0.35;
  bool gamma = false;

  void validate() const {
    if (resolution <= 0) throw ParameterError("render resolution must be positive");
    if (!(sigma > 0)) throw ParameterError("render sigma must be > 0");
    if (!(coverage_cutoff > 0)) throw ParameterError("coverage cutoff must be > 0");
    for (const Light& l : lights)
      if (!(l.intensity >= 0)) throw ParameterError("light intensities must be >= 0");
  }
};

inline double soft_coverage(double sdist, double sigma) {
  if (!(sigma > 0)) throw ParameterError("soft_coverage: sigma must be > 0");
  return sigmoid(sdist / sigma);
}

inline double soft_coverage_derivative(double sdist, double sigma) {
  const double a = soft_coverage(sdist, sigma);
  return a * (1 - a) / sigma;
}

// Decoded maps travel with their logits so the reverse pass can chain
// through the decode.
struct Material {
  TexelMap texture;
  TexelMap normal_map;
  DecodedMap texture_decoded;
  DecodedMap normal_decoded;

  static std::shared_ptr<const Material> make(TexelMap texture, TexelMap normal_map) {
    if (texture.kind != TexelKind::color) throw ParameterError("texture map must be a color map");
    if (normal_map.kind != TexelKind::normal) throw ParameterError("normal map must be a normal map");
    auto m = std::make_shared<Material>();
    m->texture_decoded = decode(texture);
    m->normal_decoded = decode(normal_map);
    m->texture = std::move(texture);
    m->normal_map = std::move(normal_map);
    return m;
  }
};

struct TangentFrame {
  Vec3 tangent, bitangent, normal;
};

namespace detail {

struct FaceTangent {
  Vec3 raw;           // unnormalized dP/du
  double handedness;  // +1 unless the UV chart is mirrored
  bool fallback;
};

// dP/du from the UV parametrization; zero-area UV triangles fall back to
// the first edge direction.
inline FaceTangent face_tangent(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec2& t0, const Vec2& t1,
                                const Vec2& t2) {
  const Vec3 e1 = p1 - p0, e2 = p2 - p0;
  const Vec2 d1 = t1 - t0, d2 = t2 - t0;
  const double r = d1.x() * d2.y() - d2.x() * d1.y();
  const double scale = std::max(d1.squaredNorm(), d2.squaredNorm());
  if (!(std::abs(r) > 1e-12 * std::max(scale, 1e-300))) return {e1, 1.0, true};
  const Vec3 t = (e1 * d2.y() - e2 * d1.y()) / r;
  const Vec3 b = (e2 * d1.x() - e1 * d2.x()) / r;
  const Vec3 n = e1.cross(e2);
  return {t, n.cross(t).dot(b) < 0 ? -1.0 : 1.0, false};
}

}  // namespace detail

// Orthonormal per-face frames, tangent Gram-Schmidt'ed against the
// geometric normal and bitangent = normal x tangent.
inline std::vector<TangentFrame> compute_tangent_frames(const Positions& vertices, const std::vector<Face>& faces,
                                                        const std::vector<Vec2>& uvs,
                                                        const std::vector<Face>& uv_faces,
                                                        int* fallback_count = nullptr) {
  if (uv_faces.size() != faces.size()) throw ParameterError("compute_tangent_frames: uv_faces size mismatch");
  std::vector<TangentFrame> frames;
  frames.reserve(faces.size());
  int fallbacks = 0;
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const Vec3 p0 = vertices.row(faces[f][0]), p1 = vertices.row(faces[f][1]), p2 = vertices.row(faces[f][2]);
    const auto ft = detail::face_tangent(p0, p1, p2, uvs[uv_faces[f][0]], uvs[uv_faces[f][1]], uvs[uv_faces[f][2]]);
    if (ft.fallback) ++fallbacks;
    const Vec3 n = (p1 - p0).cross(p2 - p0).normalized();
    Vec3 t = ft.raw - ft.raw.dot(n) * n;
    if (t.norm() < 1e-12) t = n.unitOrthogonal();
    t.normalize();
    frames.push_back({t, n.cross(t), n});
  }
  if (fallback_count) *fallback_count = fallbacks;
  return frames;
}

struct SilhouetteEdge {
  int a = -1, b = -1;  // vertex indices
  int face = -1;       // the front-facing face (or the only face of a boundary edge)
};

struct PixelRecord {
  int face = -1;   // face whose shading is used (-1: background only)
  int edge = -1;   // nearest silhouette edge within the cutoff (-1: none)
  bool covered = false;
  double sdist = 0;
  double edge_t = 0;  // closest-point parameter on the edge
  double alpha = 0;
};

// Everything render_backward needs.
struct RenderTape {
  int width = 0, height = 0;
  Positions vertices;
  std::vector<Face> faces;
  std::vector<Vec2> uvs;
  std::vector<Face> uv_faces;
  bool wrap_u = false;
  std::shared_ptr<const Material> material;
  CameraFrame frame;
  RenderConfig cfg;
  Image background;

  std::vector<Vec2> ndc;
  std::vector<Vec3> cam;  // camera-space positions
  std::vector<char> vertex_valid;
  std::vector<char> face_valid;
  std::vector<Vec3> normal_sum;  // unnormalized vertex normals
  std::vector<Vec3> vertex_normal;
  std::vector<detail::FaceTangent> tangents;
  std::vector<SilhouetteEdge> silhouettes;
  std::vector<PixelRecord> pixels;
  int tangent_fallbacks = 0;
};

struct RenderResult {
  Image image;
  RenderTape tape;
};

// Gradients of one render. Map gradients are w.r.t. the logits.
struct RenderGrads {
  Positions vertices;
  TexelMap texture;
  TexelMap normal_map;
  std::vector<double> background;  // w.r.t. background rgb
};

// Same, with map gradients left in decoded space (cheaper to sum over views).
struct DecodedRenderGrads {
  Positions vertices;
  DecodedMap texture;
  DecodedMap normal_map;
  std::vector<double> background;
};

namespace detail {

inline Vec2 pixel_center_ndc(int x, int y, int w, int h) {
  return {2.0 * (x + 0.5) / w - 1.0, 1.0 - 2.0 * (y + 0.5) / h};
}

// Intermediate values of one shading evaluation, kept for the reverse pass.
struct ShadeEval {
  int face = -1;
  Vec2 q;
  std::array<Vec2, 3> P;
  std::array<double, 3> z{}, A{}, lam{}, w{}, b{};
  double D = 0, W = 0;
  Vec2 uv;
  BilinearTaps taps;
  Vec3 albedo, nmap;
  Vec3 nsum;
  double nsum_norm = 0;
  Vec3 N;
  Vec3 tp;
  double tp_norm = 0;
  bool tangent_ok = true;
  Vec3 T, B;
  double h = 1;
  Vec3 np;
  double np_norm = 0;
  Vec3 n;
  double light = 0;
  Vec3 linear, shaded;
};

inline ShadeEval shade_forward(const RenderTape& tp, int f, const Vec2& q) {
  ShadeEval s;
  s.face = f;
  s.q = q;
  const Face& t = tp.faces[f];
  for (int i = 0; i < 3; ++i) {
    s.P[i] = tp.ndc[t[i]];
    s.z[i] = tp.cam[t[i]].z();
  }
  s.A[0] = cross2(s.P[1] - q, s.P[2] - q);
  s.A[1] = cross2(s.P[2] - q, s.P[0] - q);
  s.A[2] = cross2(s.P[0] - q, s.P[1] - q);
  s.D = s.A[0] + s.A[1] + s.A[2];
  for (int i = 0; i < 3; ++i) {
    s.lam[i] = s.A[i] / s.D;
    s.w[i] = s.lam[i] / s.z[i];
  }
  s.W = s.w[0] + s.w[1] + s.w[2];
  for (int i = 0; i < 3; ++i) s.b[i] = s.w[i] / s.W;

  const Material& m = *tp.material;
  s.uv = Vec2::Zero();
  if (!tp.uv_faces.empty())
    for (int i = 0; i < 3; ++i) s.uv += s.b[i] * tp.uvs[tp.uv_faces[f][i]];
  s.taps = bilinear_taps(m.texture_decoded.width, m.texture_decoded.height, s.uv, tp.wrap_u);
  s.albedo = gather(m.texture_decoded, s.taps);
  const BilinearTaps ntaps = bilinear_taps(m.normal_decoded.width, m.normal_decoded.height, s.uv, tp.wrap_u);
  s.nmap = gather(m.normal_decoded, ntaps);

  s.nsum = Vec3::Zero();
  for (int i = 0; i < 3; ++i) s.nsum += s.b[i] * tp.vertex_normal[t[i]];
  s.nsum_norm = std::max(s.nsum.norm(), 1e-300);
  s.N = s.nsum / s.nsum_norm;

  const auto& ft = tp.tangents[f];
  s.h = ft.handedness;
  s.tp = ft.raw - ft.raw.dot(s.N) * s.N;
  s.tp_norm = s.tp.norm();
  if (s.tp_norm > 1e-12) {
    s.T = s.tp / s.tp_norm;
  } else {
    s.tangent_ok = false;
    s.T = s.N.unitOrthogonal();
  }
  s.B = s.h * s.N.cross(s.T);
  s.np = s.nmap.x() * s.T + s.nmap.y() * s.B + s.nmap.z() * s.N;
  s.np_norm = std::max(s.np.norm(), 1e-300);
  s.n = s.np / s.np_norm;

  s.light = tp.cfg.ambient;
  for (const Light& l : tp.cfg.lights) s.light += l.intensity * std::max(0.0, s.n.dot(l.direction));
  s.linear = s.albedo * s.light;
  s.shaded = s.linear;
  if (tp.cfg.gamma)
    for (int c = 0; c < 3; ++c) s.shaded[c] = std::pow(std::max(s.linear[c], 1e-8), 1.0 / 2.2);
  return s;
}

// Accumulators in terms of the tape's intermediate quantities; converted to
// vertex gradients once per render.
struct GradAccum {
  std::vector<Vec2> ndc;
  std::vector<double> depth;
  std::vector<Vec3> vertex_normal;
  std::vector<Vec3> tangent_raw;
  DecodedMap texture, normal_map;
};

// Returns dL/dq; everything else is accumulated.
inline Vec2 shade_backward(const RenderTape& tp, const ShadeEval& s, const Vec3& g_shaded, GradAccum& acc) {
  const Material& m = *tp.material;
  const Face& t = tp.faces[s.face];
  Vec3 g_linear = g_shaded;
  if (tp.cfg.gamma)
    for (int c = 0; c < 3; ++c)
      g_linear[c] = s.linear[c] > 1e-8 ? g_shaded[c] * (1.0 / 2.2) * std::pow(s.linear[c], 1.0 / 2.2 - 1.0) : 0.0;

  // shaded = albedo * light
  const Vec3 g_albedo = g_linear * s.light;
  const double g_light = g_linear.dot(s.albedo);
  Vec3 g_n = Vec3::Zero();
  for (const Light& l : tp.cfg.lights)
    if (s.n.dot(l.direction) > 0) g_n += l.intensity * g_light * l.direction;

  const Vec3 g_np = normalize_backward(g_n, s.n, s.np_norm);
  const Vec3 g_nmap(g_np.dot(s.T), g_np.dot(s.B), g_np.dot(s.N));
  Vec3 g_T = s.nmap.x() * g_np;
  const Vec3 g_B = s.nmap.y() * g_np;
  Vec3 g_N = s.nmap.z() * g_np;
  // B = h N x T
  g_N += s.h * s.T.cross(g_B);
  g_T += s.h * g_B.cross(s.N);
  // T = normalize(t - (t.N) N)
  if (s.tangent_ok) {
    const Vec3 g_tp = normalize_backward(g_T, s.T, s.tp_norm);
    const Vec3& traw = tp.tangents[s.face].raw;
    const double tn = traw.dot(s.N);
    acc.tangent_raw[s.face] += g_tp - s.N * s.N.dot(g_tp);
    g_N -= tn * g_tp + s.N.dot(g_tp) * traw;
  }
  const Vec3 g_nsum = normalize_backward(g_N, s.N, s.nsum_norm);

  // texture lookups: scatter into texels, and collect d/duv
  Vec2 g_uv = Vec2::Zero();
  for (int k = 0; k < 4; ++k) {
    const double* tex = &m.texture_decoded.values[3 * s.taps.index[k]];
    double* gt = &acc.texture.values[3 * s.taps.index[k]];
    double dot = 0;
    for (int c = 0; c < 3; ++c) {
      gt[c] += s.taps.weight[k] * g_albedo[c];
      dot += g_albedo[c] * tex[c];
    }
    g_uv.x() += s.taps.dweight_du[k] * dot;
    g_uv.y() += s.taps.dweight_dv[k] * dot;
  }
  const BilinearTaps ntaps = bilinear_taps(m.normal_decoded.width, m.normal_decoded.height, s.uv, tp.wrap_u);
  for (int k = 0; k < 4; ++k) {
    const double* nm = &m.normal_decoded.values[3 * ntaps.index[k]];
    double* gn = &acc.normal_map.values[3 * ntaps.index[k]];
    double dot = 0;
    for (int c = 0; c < 3; ++c) {
      gn[c] += ntaps.weight[k] * g_nmap[c];
      dot += g_nmap[c] * nm[c];
    }
    g_uv.x() += ntaps.dweight_du[k] * dot;
    g_uv.y() += ntaps.dweight_dv[k] * dot;
  }

  // attributes are b-weighted sums
  std::array<double, 3> g_b{};
  for (int i = 0; i < 3; ++i) {
    const Vec3& vn = tp.vertex_normal[t[i]];
    g_b[i] += g_nsum.dot(vn);
    acc.vertex_normal[t[i]] += s.b[i] * g_nsum;
    if (!tp.uv_faces.empty()) g_b[i] += g_uv.dot(tp.uvs[tp.uv_faces[s.face][i]]);
  }
  // b = w / W, w = lam / z
  const double bg = g_b[0] * s.b[0] + g_b[1] * s.b[1] + g_b[2] * s.b[2];
  std::array<double, 3> g_lam{};
  for (int i = 0; i < 3; ++i) {
    const double g_w = (g_b[i] - bg) / s.W;
    g_lam[i] = g_w / s.z[i];
    acc.depth[t[i]] -= g_w * s.lam[i] / (s.z[i] * s.z[i]);
  }
  // lam = A / sum(A)
  const double lg = g_lam[0] * s.lam[0] + g_lam[1] * s.lam[1] + g_lam[2] * s.lam[2];
  Vec2 g_q = Vec2::Zero();
  std::array<Vec2, 3> g_P{Vec2::Zero(), Vec2::Zero(), Vec2::Zero()};
  auto cross_back = [&](int ia, int ib, double g) {
    // A = cross2(P[ia] - q, P[ib] - q)
    const Vec2 a = s.P[ia] - s.q, b = s.P[ib] - s.q;
    const Vec2 ga(g * b.y(), -g * b.x()), gb(-g * a.y(), g * a.x());
    g_P[ia] += ga;
    g_P[ib] += gb;
    g_q -= ga + gb;
  };
  for (int i = 0; i < 3; ++i) {
    const double g_A = (g_lam[i] - lg) / s.D;
    cross_back((i + 1) % 3, (i + 2) % 3, g_A);
  }
  for (int i = 0; i < 3; ++i) acc.ndc[t[i]] += g_P[i];
  return g_q;
}

struct EdgeDistance {
  double dist;
  double t;
  Vec2 closest;
};

inline EdgeDistance point_segment(const Vec2& q, const Vec2& a, const Vec2& b) {
  const Vec2 e = b - a;
  const double l2 = e.squaredNorm();
  double t = l2 > 0 ? (q - a).dot(e) / l2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const Vec2 c = a + t * e;
  return {(q - c).norm(), t, c};
}

}  // namespace detail

inline RenderResult render(const Positions& vertices, const ControlMesh& topology,
                           std::shared_ptr<const Material> material, const CameraPose& camera, const Image& background,
                           const RenderConfig& cfg) {
  cfg.validate();
  if (!material) throw ParameterError("render: material is null");
  if (background.width != cfg.resolution || background.height != cfg.resolution)
    throw ParameterError("render: background size does not match resolution");
  if (!topology.uv_faces.empty() && topology.uv_faces.size() != topology.faces.size())
    throw ParameterError("render: uv_faces size mismatch");

  RenderResult result;
  RenderTape& tp = result.tape;
  tp.width = tp.height = cfg.resolution;
  tp.vertices = vertices;
  tp.faces = topology.faces;
  tp.uvs = topology.uvs;
  tp.uv_faces = topology.uv_faces;
  tp.wrap_u = topology.wrap_u;
  tp.material = std::move(material);
  tp.frame = CameraFrame::from_pose(camera);
  tp.cfg = cfg;
  tp.background = background;

  const int nv = int(vertices.rows());
  const int nf = int(tp.faces.size());
  const int W = tp.width, H = tp.height;
  for (const Face& t : tp.faces)
    for (int c : t)
      if (c < 0 || c >= nv) throw ParameterError("render: face index out of range");

  tp.ndc.resize(nv);
  tp.cam.resize(nv);
  tp.vertex_valid.resize(nv);
  for (int v = 0; v < nv; ++v) {
    tp.cam[v] = tp.frame.to_camera(vertices.row(v).transpose());
    tp.vertex_valid[v] = tp.cam[v].z() > tp.frame.near;
    const double z = tp.vertex_valid[v] ? tp.cam[v].z() : 1.0;
    tp.ndc[v] = tp.frame.focal * Vec2(tp.cam[v].x() / z, tp.cam[v].y() / z);
  }
  tp.normal_sum.assign(nv, Vec3::Zero());
  tp.vertex_normal.assign(nv, Vec3::Zero());
  tp.tangents.resize(nf);
  tp.face_valid.resize(nf);
  std::vector<double> face_area(nf, 0.0);
  for (int f = 0; f < nf; ++f) {
    const Face& t = tp.faces[f];
    const Vec3 p0 = vertices.row(t[0]), p1 = vertices.row(t[1]), p2 = vertices.row(t[2]);
    const Vec3 n = (p1 - p0).cross(p2 - p0);
    for (int c : t) tp.normal_sum[c] += n;
    if (!tp.uv_faces.empty()) {
      const Face& u = tp.uv_faces[f];
      tp.tangents[f] = detail::face_tangent(p0, p1, p2, tp.uvs[u[0]], tp.uvs[u[1]], tp.uvs[u[2]]);
    } else {
      tp.tangents[f] = {p1 - p0, 1.0, true};
    }
    tp.tangent_fallbacks += tp.tangents[f].fallback;
    tp.face_valid[f] = tp.vertex_valid[t[0]] && tp.vertex_valid[t[1]] && tp.vertex_valid[t[2]];
    face_area[f] = cross2(tp.ndc[t[1]] - tp.ndc[t[0]], tp.ndc[t[2]] - tp.ndc[t[0]]);
  }
  for (int v = 0; v < nv; ++v) {
    const double len = tp.normal_sum[v].norm();
    tp.vertex_normal[v] = len > 0 ? Vec3(tp.normal_sum[v] / len) : Vec3::UnitZ();
  }

  // z-buffer
  tp.pixels.assign(std::size_t(W) * H, PixelRecord{});
  std::vector<double> zbuf(std::size_t(W) * H, std::numeric_limits<double>::infinity());
  auto to_px = [&](double x) { return (x + 1) / 2 * W - 0.5; };
  auto to_py = [&](double y) { return (1 - y) / 2 * H - 0.5; };
  for (int f = 0; f < nf; ++f) {
    if (!tp.face_valid[f] || !(std::abs(face_area[f]) > 1e-14)) continue;
    const Face& t = tp.faces[f];
    const Vec2 &P0 = tp.ndc[t[0]], &P1 = tp.ndc[t[1]], &P2 = tp.ndc[t[2]];
    const double xmin = std::min({P0.x(), P1.x(), P2.x()}), xmax = std::max({P0.x(), P1.x(), P2.x()});
    const double ymin = std::min({P0.y(), P1.y(), P2.y()}), ymax = std::max({P0.y(), P1.y(), P2.y()});
    const int x0 = std::max(0, int(std::floor(to_px(xmin)))), x1 = std::min(W - 1, int(std::ceil(to_px(xmax))));
    const int y0 = std::max(0, int(std::floor(to_py(ymax)))), y1 = std::min(H - 1, int(std::ceil(to_py(ymin))));
    const double iz0 = 1 / tp.cam[t[0]].z(), iz1 = 1 / tp.cam[t[1]].z(), iz2 = 1 / tp.cam[t[2]].z();
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const Vec2 q = detail::pixel_center_ndc(x, y, W, H);
        const double a0 = cross2(P1 - q, P2 - q) / face_area[f];
        const double a1 = cross2(P2 - q, P0 - q) / face_area[f];
        const double a2 = 1 - a0 - a1;
        if (a0 < 0 || a1 < 0 || a2 < 0) continue;
        const double z = 1 / (a0 * iz0 + a1 * iz1 + a2 * iz2);
        const std::size_t idx = std::size_t(y) * W + x;
        if (z < zbuf[idx]) {
          zbuf[idx] = z;
          tp.pixels[idx].face = f;
          tp.pixels[idx].covered = true;
        }
      }
  }

  // silhouette edges: one adjacent face front-facing, the other not
  {
    struct HalfEdge {
      std::uint64_t key;
      int face;
      int a, b;
    };
    std::vector<HalfEdge> half;
    half.reserve(std::size_t(nf) * 3);
    for (int f = 0; f < nf; ++f)
      for (int c = 0; c < 3; ++c) {
        const int a = tp.faces[f][c], b = tp.faces[f][(c + 1) % 3];
        half.push_back({edge_key(a, b), f, a, b});
      }
    std::sort(half.begin(), half.end(), [](const HalfEdge& x, const HalfEdge& y) {
      return x.key != y.key ? x.key < y.key : x.face < y.face;
    });
    auto front = [&](int f) { return face_area[f] > 0; };
    for (std::size_t i = 0; i < half.size();) {
      std::size_t j = i;
      while (j < half.size() && half[j].key == half[i].key) ++j;
      const int a = int(half[i].key >> 32), b = int(half[i].key & 0xffffffffu);
      bool all_valid = true;
      for (std::size_t k = i; k < j; ++k) all_valid = all_valid && tp.face_valid[half[k].face];
      if (all_valid) {
        if (j - i == 1) {
          tp.silhouettes.push_back({a, b, half[i].face});
        } else if (j - i == 2 && front(half[i].face) != front(half[i + 1].face)) {
          tp.silhouettes.push_back({a, b, front(half[i].face) ? half[i].face : half[i + 1].face});
        }
      }
      i = j;
    }
  }

  // nearest silhouette edge per pixel, binned into 8x8 tiles
  const double sigma = cfg.sigma;
  const double reach = cfg.coverage_cutoff * sigma;
  constexpr int tile = 8;
  const int tw = (W + tile - 1) / tile, th = (H + tile - 1) / tile;
  std::vector<std::vector<int>> bins(std::size_t(tw) * th);
  for (int e = 0; e < int(tp.silhouettes.size()); ++e) {
    const Vec2 &A = tp.ndc[tp.silhouettes[e].a], &B = tp.ndc[tp.silhouettes[e].b];
    const int x0 = std::max(0, int(std::floor(to_px(std::min(A.x(), B.x()) - reach))));
    const int x1 = std::min(W - 1, int(std::ceil(to_px(std::max(A.x(), B.x()) + reach))));
    const int y0 = std::max(0, int(std::floor(to_py(std::max(A.y(), B.y()) + reach))));
    const int y1 = std::min(H - 1, int(std::ceil(to_py(std::min(A.y(), B.y()) - reach))));
    if (x0 > x1 || y0 > y1) continue;
    for (int ty = y0 / tile; ty <= y1 / tile; ++ty)
      for (int tx = x0 / tile; tx <= x1 / tile; ++tx) bins[std::size_t(ty) * tw + tx].push_back(e);
  }

  Image& img = result.image;
  img = Image(W, H);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const std::size_t idx = std::size_t(y) * W + x;
      PixelRecord& px = tp.pixels[idx];
      const Vec2 q = detail::pixel_center_ndc(x, y, W, H);
      double best = std::numeric_limits<double>::infinity();
      for (int e : bins[std::size_t(y / tile) * tw + x / tile]) {
        const auto d = detail::point_segment(q, tp.ndc[tp.silhouettes[e].a], tp.ndc[tp.silhouettes[e].b]);
        if (d.dist < best) {
          best = d.dist;
          px.edge = e;
          px.edge_t = d.t;
        }
      }
      if (!(best <= reach)) px.edge = -1;
      if (px.edge < 0) {
        px.alpha = px.covered ? 1.0 : 0.0;
      } else {
        px.sdist = px.covered ? best : -best;
        px.alpha = sigmoid(px.sdist / sigma);
        if (!px.covered) px.face = tp.silhouettes[px.edge].face;
      }
      Vec3 color = background.pixel(x, y);
      if (px.face >= 0 && px.alpha > 0) {
        Vec2 at = q;
        if (!px.covered) {
          const auto& se = tp.silhouettes[px.edge];
          at = tp.ndc[se.a] + px.edge_t * (tp.ndc[se.b] - tp.ndc[se.a]);
        }
        const auto s = detail::shade_forward(tp, px.face, at);
        color = px.alpha * s.shaded + (1 - px.alpha) * color;
      }
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = color[c];
      img.alpha[idx] = px.alpha;
    }
  return result;
}

inline RenderResult render(const ControlMesh& mesh, std::shared_ptr<const Material> material,
                           const CameraPose& camera, const Image& background, const RenderConfig& cfg) {
  return render(mesh.vertices, mesh, std::move(material), camera, background, cfg);
}

inline DecodedRenderGrads render_backward_decoded(const RenderTape& tp, const std::vector<double>& grad_image) {
  const int W = tp.width, H = tp.height;
  if (grad_image.size() != std::size_t(W) * H * 3)
    throw ParameterError("render_backward: gradient image has " + std::to_string(grad_image.size()) +
                         " values, expected " + std::to_string(std::size_t(W) * H * 3));
  const int nv = int(tp.vertices.rows());
  const Material& m = *tp.material;
  detail::GradAccum acc;
  acc.ndc.assign(nv, Vec2::Zero());
  acc.depth.assign(nv, 0.0);
  acc.vertex_normal.assign(nv, Vec3::Zero());
  acc.tangent_raw.assign(tp.faces.size(), Vec3::Zero());
  acc.texture = DecodedMap(m.texture_decoded.width, m.texture_decoded.height);
  acc.normal_map = DecodedMap(m.normal_decoded.width, m.normal_decoded.height);

  DecodedRenderGrads out;
  out.background.assign(grad_image.size(), 0.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const std::size_t idx = std::size_t(y) * W + x;
      const Vec3 g(grad_image[3 * idx], grad_image[3 * idx + 1], grad_image[3 * idx + 2]);
      const PixelRecord& px = tp.pixels[idx];
      for (int c = 0; c < 3; ++c) out.background[3 * idx + c] = (1 - px.alpha) * g[c];
      if (px.face < 0 || px.alpha <= 0 || g.isZero(0)) continue;
      const Vec2 q = detail::pixel_center_ndc(x, y, W, H);
      Vec2 at = q;
      const SilhouetteEdge* se = px.edge >= 0 ? &tp.silhouettes[px.edge] : nullptr;
      if (!px.covered) at = tp.ndc[se->a] + px.edge_t * (tp.ndc[se->b] - tp.ndc[se->a]);
      const auto s = detail::shade_forward(tp, px.face, at);
      const Vec2 g_at = detail::shade_backward(tp, s, px.alpha * g, acc);
      if (!se) continue;

      const Vec2 A = tp.ndc[se->a], B = tp.ndc[se->b];
      const Vec2 e = B - A;
      const double l2 = e.squaredNorm();
      const bool interior = px.edge_t > 0 && px.edge_t < 1;
      const double t = px.edge_t;
      const Vec2 rel = q - A;

      // closest point C = A + t (B - A), with t depending on A, B when interior
      Vec2 gA = Vec2::Zero(), gB = Vec2::Zero();
      if (!px.covered) {
        gA += (1 - t) * g_at;
        gB += t * g_at;
        if (interior && l2 > 0) {
          const double g_t = g_at.dot(e);
          const double sdot = rel.dot(e);
          gA += g_t * ((-e - rel) / l2 + 2 * sdot * e / (l2 * l2));
          gB += g_t * (rel / l2 - 2 * sdot * e / (l2 * l2));
        }
      }
      // alpha = sigmoid(+-dist / sigma)
      const Vec3 base = s.shaded - tp.background.pixel(x, y);
      const double g_alpha = g.dot(base);
      const double g_sdist = g_alpha * px.alpha * (1 - px.alpha) / tp.cfg.sigma;
      const double dist = std::abs(px.sdist);
      if (dist > 0) {
        const Vec2 C = A + t * e;
        const Vec2 nrm = (q - C) / dist;
        const double g_dist = px.covered ? g_sdist : -g_sdist;
        // d dist / dC = -nrm; C's dependence through t vanishes at the optimum
        gA += -g_dist * (1 - t) * nrm;
        gB += -g_dist * t * nrm;
      }
      acc.ndc[se->a] += gA;
      acc.ndc[se->b] += gB;
    }

  // projection: ndc = focal * (x, y) / z
  Positions gV = Positions::Zero(nv, 3);
  for (int v = 0; v < nv; ++v) {
    if (!tp.vertex_valid[v]) continue;
    const Vec3& c = tp.cam[v];
    const Vec2& g = acc.ndc[v];
    const double f = tp.frame.focal;
    const Vec3 gc(f * g.x() / c.z(), f * g.y() / c.z(), -f * (g.x() * c.x() + g.y() * c.y()) / (c.z() * c.z()) + acc.depth[v]);
    gV.row(v) += (gc.x() * tp.frame.right + gc.y() * tp.frame.up + gc.z() * tp.frame.forward).transpose();
  }
  // vertex normals and face tangents
  std::vector<Vec3> g_sum(nv, Vec3::Zero());
  for (int v = 0; v < nv; ++v) {
    const double len = tp.normal_sum[v].norm();
    if (len > 0) g_sum[v] = normalize_backward(acc.vertex_normal[v], tp.vertex_normal[v], len);
  }
  for (std::size_t f = 0; f < tp.faces.size(); ++f) {
    const Face& t = tp.faces[f];
    const Vec3 p0 = tp.vertices.row(t[0]), p1 = tp.vertices.row(t[1]), p2 = tp.vertices.row(t[2]);
    const Vec3 e1 = p1 - p0, e2 = p2 - p0;
    const Vec3 gn = g_sum[t[0]] + g_sum[t[1]] + g_sum[t[2]];
    Vec3 ge1 = e2.cross(gn), ge2 = gn.cross(e1);
    const Vec3& gt = acc.tangent_raw[f];
    if (!gt.isZero(0)) {
      if (tp.tangents[f].fallback || tp.uv_faces.empty()) {
        ge1 += gt;
      } else {
        const Face& u = tp.uv_faces[f];
        const Vec2 d1 = tp.uvs[u[1]] - tp.uvs[u[0]], d2 = tp.uvs[u[2]] - tp.uvs[u[0]];
        const double r = d1.x() * d2.y() - d2.x() * d1.y();
        ge1 += gt * (d2.y() / r);
        ge2 -= gt * (d1.y() / r);
      }
    }
    gV.row(t[1]) += ge1.transpose();
    gV.row(t[2]) += ge2.transpose();
    gV.row(t[0]) -= (ge1 + ge2).transpose();
  }
  out.vertices = std::move(gV);
  out.texture = std::move(acc.texture);
  out.normal_map = std::move(acc.normal_map);
  return out;
}

inline RenderGrads render_backward(const RenderTape& tape, const std::vector<double>& grad_image) {
  DecodedRenderGrads d = render_backward_decoded(tape, grad_image);
  RenderGrads g;
  g.vertices = std::move(d.vertices);
  g.texture = decode_backward(tape.material->texture, d.texture);
  g.normal_map = decode_backward(tape.material->normal_map, d.normal_map);
  g.background = std::move(d.background);
  return g;
}

// Faces whose geometric normal disagrees with the average vertex normal of
// their corners.
inline int count_inverted_faces(const Positions& vertices, const std::vector<Face>& faces) {
  std::vector<Vec3> vn(vertices.rows(), Vec3::Zero());
  std::vector<Vec3> fn(faces.size());
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const Vec3 p0 = vertices.row(faces[f][0]), p1 = vertices.row(faces[f][1]), p2 = vertices.row(faces[f][2]);
    fn[f] = (p1 - p0).cross(p2 - p0);
    for (int c : faces[f]) vn[c] += fn[f];
  }
  int inverted = 0;
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const Vec3 avg = vn[faces[f][0]] + vn[faces[f][1]] + vn[faces[f][2]];
    if (fn[f].dot(avg) < 0) ++inverted;
  }
  return inverted;
}

}  // namespace meshforge
