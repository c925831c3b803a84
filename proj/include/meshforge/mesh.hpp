#pragma once

// Closed triangle meshes: representation, adjacency and the starting
// primitives (icosphere and two cuboids).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "types.hpp"

namespace meshforge {

struct ControlMesh {
  Positions vertices;
  std::vector<Face> faces;
  std::vector<Vec2> uvs;
  std::vector<Face> uv_faces;  // per-face triple into uvs
  // Sample textures with wrap-around in u (equirectangular charts).
  bool wrap_u = false;

  int vertex_count() const { return int(vertices.rows()); }
  int face_count() const { return int(faces.size()); }
};

struct ManifoldReport {
  bool is_closed_manifold = false;
  std::vector<std::array<int, 2>> offending_edges;
  // Vertices whose incident faces split into more than one fan.
  std::vector<int> singular_vertices;
  int min_valence = 0;
  int max_valence = 0;
};

inline std::uint64_t edge_key(int a, int b) {
  if (a > b) std::swap(a, b);
  return (std::uint64_t(std::uint32_t(a)) << 32) | std::uint32_t(b);
}

inline std::uint64_t directed_key(int a, int b) {
  return (std::uint64_t(std::uint32_t(a)) << 32) | std::uint32_t(b);
}

// Edge census. Never throws; every failure is carried in the report.
inline ManifoldReport validate_manifold(const ControlMesh& mesh) {
  ManifoldReport report;
  const int nv = mesh.vertex_count();
  std::map<std::uint64_t, int> undirected;
  std::map<std::uint64_t, int> directed;
  std::vector<std::vector<int>> incident(std::max(nv, 0));
  bool bad_face = false;
  for (int f = 0; f < mesh.face_count(); ++f) {
    const Face& t = mesh.faces[f];
    if (t[0] < 0 || t[1] < 0 || t[2] < 0 || t[0] >= nv || t[1] >= nv || t[2] >= nv ||
        t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) {
      bad_face = true;
      continue;
    }
    for (int c = 0; c < 3; ++c) {
      const int a = t[c], b = t[(c + 1) % 3];
      ++undirected[edge_key(a, b)];
      ++directed[directed_key(a, b)];
      incident[t[c]].push_back(f);
    }
  }
  for (const auto& [key, count] : undirected) {
    const int a = int(key >> 32), b = int(key & 0xffffffffu);
    const bool twice_same_way = directed[directed_key(a, b)] > 1 || directed[directed_key(b, a)] > 1;
    if (count != 2 || twice_same_way) report.offending_edges.push_back({a, b});
  }

  // Valence is counted per fan: faces around a vertex that are chained by
  // shared edges through that vertex.
  report.min_valence = nv > 0 ? std::numeric_limits<int>::max() : 0;
  report.max_valence = 0;
  for (int v = 0; v < nv; ++v) {
    const auto& inc = incident[v];
    std::vector<int> component(inc.size(), -1);
    int components = 0;
    for (std::size_t s = 0; s < inc.size(); ++s) {
      if (component[s] >= 0) continue;
      std::vector<std::size_t> stack{s};
      component[s] = components;
      int size = 0;
      while (!stack.empty()) {
        const std::size_t i = stack.back();
        stack.pop_back();
        ++size;
        const Face& fi = mesh.faces[inc[i]];
        for (std::size_t j = 0; j < inc.size(); ++j) {
          if (component[j] >= 0) continue;
          const Face& fj = mesh.faces[inc[j]];
          // share an edge through v: some other corner in common
          bool shares = false;
          for (int a : fi)
            for (int b : fj)
              if (a == b && a != v) shares = true;
          if (shares) {
            component[j] = components;
            stack.push_back(j);
          }
        }
      }
      report.min_valence = std::min(report.min_valence, size);
      report.max_valence = std::max(report.max_valence, size);
      ++components;
    }
    if (components == 0) report.min_valence = 0;
    if (components > 1) report.singular_vertices.push_back(v);
  }
  report.is_closed_manifold = report.offending_edges.empty() && !bad_face;
  if (bad_face && report.offending_edges.empty()) report.offending_edges.push_back({-1, -1});
  return report;
}

// Ordered neighbours of v. For a face (v, a, b) the ring visits a then b,
// i.e. counter-clockwise around the outward normal.
inline std::vector<int> one_ring(const ControlMesh& mesh, int v) {
  if (v < 0 || v >= mesh.vertex_count()) throw ParameterError("one_ring: vertex index out of range");
  // next[a] = b for every incident face (v, a, b)
  std::unordered_map<int, int> next;
  std::size_t incident = 0;
  for (const Face& t : mesh.faces) {
    for (int c = 0; c < 3; ++c) {
      if (t[c] != v) continue;
      const int a = t[(c + 1) % 3], b = t[(c + 2) % 3];
      if (!next.emplace(a, b).second)
        throw TopologyError("one_ring: vertex " + std::to_string(v) + " has a non-manifold neighbourhood");
      ++incident;
    }
  }
  if (incident < 3) throw TopologyError("one_ring: vertex " + std::to_string(v) + " has valence < 3");
  int start = -1;
  for (const Face& t : mesh.faces)
    for (int c = 0; c < 3 && start < 0; ++c)
      if (t[c] == v) start = t[(c + 1) % 3];
  std::vector<int> ring{start};
  int cur = start;
  for (;;) {
    auto it = next.find(cur);
    if (it == next.end())
      throw TopologyError("one_ring: open fan around vertex " + std::to_string(v));
    cur = it->second;
    if (cur == start) break;
    ring.push_back(cur);
    if (ring.size() > incident) break;
  }
  if (ring.size() != incident)
    throw TopologyError("one_ring: vertex " + std::to_string(v) + " has more than one fan");
  return ring;
}

// Connectivity of a closed manifold, computed once and shared by the
// subdivision and Laplacian builders.
struct MeshTopology {
  int vertex_count = 0;
  std::vector<std::array<int, 2>> edges;     // a < b
  std::vector<std::array<int, 2>> opposite;  // third vertex of each adjacent face
  std::vector<std::vector<int>> rings;       // ordered one-rings
  std::unordered_map<std::uint64_t, int> edge_lookup;

  int edge_index(int a, int b) const {
    auto it = edge_lookup.find(edge_key(a, b));
    if (it == edge_lookup.end()) throw TopologyError("edge not in mesh");
    return it->second;
  }

  static MeshTopology build(int nverts, const std::vector<Face>& faces) {
    MeshTopology topo;
    topo.vertex_count = nverts;
    // directed edge -> third vertex
    std::unordered_map<std::uint64_t, int> third;
    third.reserve(faces.size() * 3);
    std::vector<std::unordered_map<int, int>> fan(nverts);
    for (const Face& t : faces) {
      for (int c = 0; c < 3; ++c) {
        const int a = t[c], b = t[(c + 1) % 3], o = t[(c + 2) % 3];
        if (a < 0 || a >= nverts || a == b || b == o || a == o)
          throw TopologyError("face with invalid or repeated vertex index");
        if (!third.emplace(directed_key(a, b), o).second)
          throw TopologyError("edge (" + std::to_string(a) + "," + std::to_string(b) + ") used twice in the same direction");
        fan[a].emplace(b, o);
      }
    }
    for (const auto& [key, o] : third) {
      const int a = int(key >> 32), b = int(key & 0xffffffffu);
      auto twin = third.find(directed_key(b, a));
      if (twin == third.end())
        throw TopologyError("boundary edge (" + std::to_string(a) + "," + std::to_string(b) + ")");
      if (a < b) {
        topo.edges.push_back({a, b});
        topo.opposite.push_back({o, twin->second});
      }
    }
    // deterministic edge order
    std::vector<std::size_t> order(topo.edges.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return topo.edges[x] < topo.edges[y]; });
    std::vector<std::array<int, 2>> edges, opp;
    for (std::size_t i : order) {
      edges.push_back(topo.edges[i]);
      opp.push_back(topo.opposite[i]);
    }
    topo.edges = std::move(edges);
    topo.opposite = std::move(opp);
    for (std::size_t e = 0; e < topo.edges.size(); ++e)
      topo.edge_lookup.emplace(edge_key(topo.edges[e][0], topo.edges[e][1]), int(e));

    topo.rings.resize(nverts);
    for (int v = 0; v < nverts; ++v) {
      const auto& nx = fan[v];
      if (nx.size() < 3) throw TopologyError("vertex " + std::to_string(v) + " has valence < 3");
      int start = std::numeric_limits<int>::max();
      for (const auto& kv : nx) start = std::min(start, kv.first);
      auto& ring = topo.rings[v];
      int cur = start;
      do {
        ring.push_back(cur);
        cur = nx.at(cur);
      } while (cur != start && ring.size() <= nx.size());
      if (ring.size() != nx.size())
        throw TopologyError("vertex " + std::to_string(v) + " has more than one fan");
    }
    return topo;
  }
};

inline int euler_characteristic(const ControlMesh& mesh) {
  std::map<std::uint64_t, int> edges;
  for (const Face& t : mesh.faces)
    for (int c = 0; c < 3; ++c) edges[edge_key(t[c], t[(c + 1) % 3])] = 1;
  return mesh.vertex_count() - int(edges.size()) + mesh.face_count();
}

// ---------------------------------------------------------------------------
// Primitives

enum class PrimitiveKind { sphere, cuboid_horizontal, cuboid_vertical };

inline std::string_view to_string(PrimitiveKind k) {
  switch (k) {
    case PrimitiveKind::sphere: return "sphere";
    case PrimitiveKind::cuboid_horizontal: return "cuboid_horizontal";
    case PrimitiveKind::cuboid_vertical: return "cuboid_vertical";
  }
  return "?";
}

inline PrimitiveKind parse_primitive(std::string_view s) {
  if (s == "sphere") return PrimitiveKind::sphere;
  if (s == "cuboid_horizontal") return PrimitiveKind::cuboid_horizontal;
  if (s == "cuboid_vertical") return PrimitiveKind::cuboid_vertical;
  throw ParameterError("unknown primitive '" + std::string(s) + "'");
}

inline const std::vector<PrimitiveKind>& all_primitives() {
  static const std::vector<PrimitiveKind> kinds{PrimitiveKind::sphere, PrimitiveKind::cuboid_horizontal,
                                                PrimitiveKind::cuboid_vertical};
  return kinds;
}

namespace detail {

inline double equirect_u(const Vec3& p) { return 0.5 + std::atan2(p.x(), p.z()) / (2 * std::numbers::pi); }
inline double equirect_v(const Vec3& p) { return 0.5 + std::asin(std::clamp(p.y() / p.norm(), -1.0, 1.0)) / std::numbers::pi; }

// Equirectangular UVs. Faces that straddle the u = 0/1 meridian get their
// low-u corners shifted by +1, so u may exceed 1 there; sampling wraps in u.
inline void assign_equirect_uvs(ControlMesh& mesh) {
  mesh.uvs.clear();
  mesh.uv_faces.clear();
  mesh.wrap_u = true;
  std::map<std::pair<int, long long>, int> lookup;
  auto uv_index = [&](int v, double u, double w, int pole_face) {
    const long long qu = pole_face >= 0 ? -1 - pole_face : std::llround(u * 1e9);
    auto [it, inserted] = lookup.emplace(std::make_pair(v, qu), int(mesh.uvs.size()));
    if (inserted) mesh.uvs.emplace_back(u, w);
    return it->second;
  };
  for (int f = 0; f < mesh.face_count(); ++f) {
    const Face& t = mesh.faces[f];
    std::array<double, 3> u{}, w{};
    std::array<bool, 3> pole{};
    for (int c = 0; c < 3; ++c) {
      const Vec3 p = mesh.vertices.row(t[c]).transpose();
      pole[c] = std::hypot(p.x(), p.z()) < 1e-9 * p.norm();
      u[c] = equirect_u(p);
      w[c] = equirect_v(p);
    }
    // unwrap relative to the first non-pole corner
    int ref = pole[0] ? (pole[1] ? 2 : 1) : 0;
    for (int c = 0; c < 3; ++c) {
      if (pole[c] || c == ref) continue;
      double d = u[c] - u[ref];
      if (d > 0.5) u[c] -= 1.0;
      if (d < -0.5) u[c] += 1.0;
    }
    double lo = 1e9;
    for (int c = 0; c < 3; ++c)
      if (!pole[c]) lo = std::min(lo, u[c]);
    if (lo < 0)
      for (int c = 0; c < 3; ++c) u[c] += 1.0;
    // pole corners take the mean u of the other corners
    for (int c = 0; c < 3; ++c) {
      if (!pole[c]) continue;
      double s = 0;
      int n = 0;
      for (int d = 0; d < 3; ++d)
        if (!pole[d]) s += u[d], ++n;
      u[c] = n ? s / n : 0.5;
    }
    Face uvf{};
    for (int c = 0; c < 3; ++c) uvf[c] = uv_index(t[c], u[c], w[c], pole[c] ? f : -1);
    mesh.uv_faces.push_back(uvf);
  }
}

}  // namespace detail

inline ControlMesh make_icosahedron() {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  const double raw[12][3] = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                             {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  ControlMesh mesh;
  mesh.vertices.resize(12, 3);
  for (int i = 0; i < 12; ++i) mesh.vertices.row(i) = Vec3(raw[i][0], raw[i][1], raw[i][2]).normalized();
  mesh.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  detail::assign_equirect_uvs(mesh);
  return mesh;
}

// Unit icosphere: the icosahedron with `level` rounds of 1:4 midpoint
// splits, re-projected onto the sphere.
inline ControlMesh make_icosphere(int level) {
  ControlMesh mesh = make_icosahedron();
  std::vector<Vec3> verts;
  for (int i = 0; i < mesh.vertex_count(); ++i) verts.push_back(mesh.vertices.row(i).transpose());
  std::vector<Face> faces = mesh.faces;
  for (int l = 0; l < level; ++l) {
    std::unordered_map<std::uint64_t, int> mid;
    auto midpoint = [&](int a, int b) {
      auto [it, inserted] = mid.emplace(edge_key(a, b), int(verts.size()));
      if (inserted) verts.push_back((verts[a] + verts[b]).normalized());
      return it->second;
    };
    std::vector<Face> next;
    next.reserve(faces.size() * 4);
    for (const Face& f : faces) {
      const int ab = midpoint(f[0], f[1]), bc = midpoint(f[1], f[2]), ca = midpoint(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  mesh.vertices.resize(Eigen::Index(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) mesh.vertices.row(Eigen::Index(i)) = verts[i];
  mesh.faces = std::move(faces);
  detail::assign_equirect_uvs(mesh);
  return mesh;
}

// Axis-aligned box centred at the origin with full side lengths `extents`.
// Each side is a 2^level x 2^level quad grid; quads are split along the
// diagonal through their lowest-index corner. UVs: one chart per side in a
// 3 x 2 atlas, inset so bilinear taps stay inside the chart.
inline ControlMesh make_box(const Vec3& extents, int level) {
  if (level < 0 || level > 5) throw ParameterError("box level must be in [0, 5]");
  const int n = 1 << level;
  ControlMesh mesh;
  std::map<std::array<int, 3>, int> lattice;
  std::vector<Vec3> verts;
  auto vertex = [&](std::array<int, 3> ijk) {
    auto [it, inserted] = lattice.emplace(ijk, int(verts.size()));
    if (inserted) {
      Vec3 p;
      for (int a = 0; a < 3; ++a) p[a] = (double(ijk[a]) / n - 0.5) * extents[a];
      verts.push_back(p);
    }
    return it->second;
  };
  // (normal axis, side, in-plane axis s, in-plane axis t) with s x t = outward
  const int sides[6][4] = {{0, 1, 1, 2}, {0, 0, 2, 1}, {1, 1, 2, 0}, {1, 0, 0, 2}, {2, 1, 0, 1}, {2, 0, 1, 0}};
  const double margin = 0.02;
  for (int side = 0; side < 6; ++side) {
    const int axis = sides[side][0], sgn = sides[side][1], sa = sides[side][2], ta = sides[side][3];
    const double u0 = (side % 3) / 3.0, v0 = (side / 3) / 2.0;
    const double cw = 1.0 / 3.0, ch = 0.5;
    std::vector<int> gidx((n + 1) * (n + 1)), uidx((n + 1) * (n + 1));
    for (int t = 0; t <= n; ++t)
      for (int s = 0; s <= n; ++s) {
        std::array<int, 3> ijk{};
        ijk[axis] = sgn ? n : 0;
        ijk[sa] = s;
        ijk[ta] = t;
        gidx[t * (n + 1) + s] = vertex(ijk);
        uidx[t * (n + 1) + s] = int(mesh.uvs.size());
        mesh.uvs.emplace_back(u0 + cw * (margin + (1 - 2 * margin) * double(s) / n),
                              v0 + ch * (margin + (1 - 2 * margin) * double(t) / n));
      }
    for (int t = 0; t < n; ++t)
      for (int s = 0; s < n; ++s) {
        const int corner[4] = {t * (n + 1) + s, t * (n + 1) + s + 1, (t + 1) * (n + 1) + s + 1, (t + 1) * (n + 1) + s};
        int lowest = 0;
        for (int c = 1; c < 4; ++c)
          if (gidx[corner[c]] < gidx[corner[lowest]]) lowest = c;
        const int(*tri)[3];
        static const int split02[2][3] = {{0, 1, 2}, {0, 2, 3}};
        static const int split13[2][3] = {{0, 1, 3}, {1, 2, 3}};
        tri = (lowest % 2 == 0) ? split02 : split13;
        for (int k = 0; k < 2; ++k) {
          mesh.faces.push_back({gidx[corner[tri[k][0]]], gidx[corner[tri[k][1]]], gidx[corner[tri[k][2]]]});
          mesh.uv_faces.push_back({uidx[corner[tri[k][0]]], uidx[corner[tri[k][1]]], uidx[corner[tri[k][2]]]});
        }
      }
  }
  mesh.vertices.resize(Eigen::Index(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) mesh.vertices.row(Eigen::Index(i)) = verts[i];
  return mesh;
}

inline ControlMesh make_primitive(PrimitiveKind kind, int level) {
  if (level < 0 || level > 5) throw ParameterError("primitive level must be in [0, 5], got " + std::to_string(level));
  switch (kind) {
    case PrimitiveKind::sphere: return make_icosphere(level);
    case PrimitiveKind::cuboid_horizontal: return make_box({1.6, 0.8, 0.8}, level);
    case PrimitiveKind::cuboid_vertical: return make_box({0.8, 1.6, 0.8}, level);
  }
  throw ParameterError("unknown primitive kind");
}

}  // namespace meshforge
