#pragma once

// OBJ + PNG asset export/import.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "image_io.hpp"
#include "mesh.hpp"
#include "texel_map.hpp"

namespace meshforge {

struct Assets {
  ControlMesh mesh;
  TexelMap texture;
  TexelMap normal_map;
};

inline void save_obj(const std::filesystem::path& path, const ControlMesh& mesh, const Positions& vertices,
                     const std::string& mtllib = {}) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  char buf[128];
  out << "# meshforge\n";
  if (mesh.wrap_u) out << "# meshforge wrap_u 1\n";
  if (!mtllib.empty()) out << "mtllib " << mtllib << "\n";
  for (Eigen::Index i = 0; i < vertices.rows(); ++i) {
    std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", vertices(i, 0), vertices(i, 1), vertices(i, 2));
    out << buf;
  }
  for (const Vec2& t : mesh.uvs) {
    std::snprintf(buf, sizeof buf, "vt %.9g %.9g\n", t.x(), t.y());
    out << buf;
  }
  if (!mtllib.empty()) out << "usemtl asset\n";
  const bool has_uv = !mesh.uv_faces.empty();
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    out << "f";
    for (int c = 0; c < 3; ++c) {
      out << ' ' << mesh.faces[f][c] + 1;
      if (has_uv) out << '/' << mesh.uv_faces[f][c] + 1;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

// Writes model.obj, model.mtl, texture.png and normal.png into out_dir.
inline void save_assets(const ControlMesh& mesh, const Positions& limit_vertices, const TexelMap& texture,
                        const TexelMap& normal_map, const std::filesystem::path& out_dir) {
  if (limit_vertices.rows() != mesh.vertices.rows())
    throw ParameterError("save_assets: " + std::to_string(limit_vertices.rows()) + " positions for a mesh with " +
                         std::to_string(mesh.vertices.rows()) + " vertices");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());
  save_obj(out_dir / "model.obj", mesh, limit_vertices, "model.mtl");
  {
    std::ofstream mtl(out_dir / "model.mtl");
    if (!mtl) throw IoError("cannot write model.mtl in '" + out_dir.string() + "'");
    mtl << "newmtl asset\nKd 1 1 1\nmap_Kd texture.png\nnorm normal.png\n";
  }
  write_png(out_dir / "texture.png", texel_map_to_rgb8(texture));
  write_png(out_dir / "normal.png", texel_map_to_rgb8(normal_map));
}

namespace detail {

inline int resolve_obj_index(const std::string& tok, std::size_t count, std::size_t line) {
  long idx = 0;
  try {
    std::size_t used = 0;
    idx = std::stol(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
  } catch (const std::exception&) {
    throw ParseError("bad index '" + tok + "'", line);
  }
  if (idx < 0) idx = long(count) + idx + 1;
  if (idx < 1 || std::size_t(idx) > count)
    throw ParseError("index " + tok + " out of range (have " + std::to_string(count) + ")", line);
  return int(idx - 1);
}

}  // namespace detail

// Parses v/vt/f records; polygons are fan-triangulated. With `strict`, the
// result must pass validate_manifold.
inline ControlMesh load_obj(const std::filesystem::path& path, bool strict = false) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<Vec3> verts;
  ControlMesh mesh;
  // face records are resolved after reading so forward references fail cleanly
  struct Corner {
    std::string v, t;
  };
  struct PendingFace {
    std::vector<Corner> corners;
    std::size_t line;
  };
  std::vector<PendingFace> pending;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("# meshforge wrap_u 1", 0) == 0) mesh.wrap_u = true;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ss >> x >> y >> z)) throw ParseError("malformed vertex record", lineno);
      verts.emplace_back(x, y, z);
    } else if (tag == "vt") {
      double u, v;
      if (!(ss >> u >> v)) throw ParseError("malformed texture-coordinate record", lineno);
      mesh.uvs.emplace_back(u, v);
    } else if (tag == "f") {
      PendingFace pf{{}, lineno};
      std::string tok;
      while (ss >> tok) {
        Corner c;
        const auto s1 = tok.find('/');
        c.v = tok.substr(0, s1);
        if (s1 != std::string::npos) {
          const auto s2 = tok.find('/', s1 + 1);
          c.t = tok.substr(s1 + 1, s2 == std::string::npos ? std::string::npos : s2 - s1 - 1);
        }
        pf.corners.push_back(std::move(c));
      }
      if (pf.corners.size() < 3) throw ParseError("face with fewer than 3 corners", lineno);
      pending.push_back(std::move(pf));
    }
  }
  bool any_uv = false, all_uv = true;
  for (const auto& pf : pending)
    for (const auto& c : pf.corners) {
      if (c.t.empty())
        all_uv = false;
      else
        any_uv = true;
    }
  if (any_uv && !all_uv) throw ParseError("mixed faces with and without texture coordinates", 0);
  for (const auto& pf : pending) {
    std::vector<int> vi, ti;
    for (const auto& c : pf.corners) {
      vi.push_back(detail::resolve_obj_index(c.v, verts.size(), pf.line));
      if (any_uv) ti.push_back(detail::resolve_obj_index(c.t, mesh.uvs.size(), pf.line));
    }
    for (std::size_t k = 1; k + 1 < vi.size(); ++k) {
      mesh.faces.push_back({vi[0], vi[k], vi[k + 1]});
      if (any_uv) mesh.uv_faces.push_back({ti[0], ti[k], ti[k + 1]});
    }
  }
  mesh.vertices.resize(Eigen::Index(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) mesh.vertices.row(Eigen::Index(i)) = verts[i];
  if (strict) {
    const ManifoldReport r = validate_manifold(mesh);
    if (!r.is_closed_manifold)
      throw TopologyError("'" + path.string() + "' is not a closed manifold (" +
                          std::to_string(r.offending_edges.size()) + " offending edges)");
  }
  return mesh;
}

inline Assets load_assets(const std::filesystem::path& dir) {
  for (const char* name : {"model.obj", "texture.png", "normal.png"})
    if (!std::filesystem::exists(dir / name)) throw IoError("missing asset '" + (dir / name).string() + "'");
  Assets a;
  a.mesh = load_obj(dir / "model.obj");
  a.texture = texel_map_from_rgb8(read_png(dir / "texture.png"), TexelKind::color);
  a.normal_map = texel_map_from_rgb8(read_png(dir / "normal.png"), TexelKind::normal);
  return a;
}

}  // namespace meshforge
