#include <gtest/gtest.h>

#include <set>

#include "meshforge/image_io.hpp"
#include "meshforge/mesh.hpp"
#include "meshforge/mesh_io.hpp"
#include "test_support.hpp"

using namespace meshforge;
using meshforge::testing::TempDir;

namespace {

ControlMesh tetrahedron() {
  ControlMesh m;
  m.vertices.resize(4, 3);
  m.vertices << 1, 1, 1, 1, -1, -1, -1, 1, -1, -1, -1, 1;
  m.faces = {{0, 1, 2}, {0, 2, 3}, {0, 3, 1}, {1, 3, 2}};
  return m;
}

int count_records(const std::string& text, const std::string& tag) {
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line))
    if (line.rfind(tag + " ", 0) == 0) ++n;
  return n;
}

}  // namespace

TEST(Primitives, IcosahedronCounts) {
  const ControlMesh m = make_primitive(PrimitiveKind::sphere, 0);
  EXPECT_EQ(m.vertex_count(), 12);
  EXPECT_EQ(m.face_count(), 20);
}

TEST(Primitives, IcosphereLevelOneCounts) {
  const ControlMesh m = make_primitive(PrimitiveKind::sphere, 1);
  // F -> 4F, V -> V + E with E = 30 on the icosahedron
  EXPECT_EQ(m.vertex_count(), 12 + 30);
  EXPECT_EQ(m.face_count(), 80);
}

TEST(Primitives, VerticalCuboidExtent) {
  const ControlMesh m = make_primitive(PrimitiveKind::cuboid_vertical, 0);
  EXPECT_DOUBLE_EQ(m.vertices.col(1).cwiseAbs().maxCoeff(), 0.8);
  EXPECT_DOUBLE_EQ(m.vertices.col(0).cwiseAbs().maxCoeff(), 0.4);
  EXPECT_DOUBLE_EQ(m.vertices.col(2).cwiseAbs().maxCoeff(), 0.4);
  const ControlMesh h = make_primitive(PrimitiveKind::cuboid_horizontal, 0);
  EXPECT_DOUBLE_EQ(h.vertices.col(0).cwiseAbs().maxCoeff(), 0.8);
}

TEST(Primitives, LevelOutOfRangeIsParameterError) {
  EXPECT_THROW(make_primitive(PrimitiveKind::sphere, -1), ParameterError);
  EXPECT_THROW(make_primitive(PrimitiveKind::cuboid_vertical, 6), ParameterError);
}

TEST(Primitives, AllAreClosedManifoldsWithEulerTwo) {
  for (PrimitiveKind k : all_primitives())
    for (int level = 0; level <= 3; ++level) {
      const ControlMesh m = make_primitive(k, level);
      SCOPED_TRACE(std::string(to_string(k)) + " level " + std::to_string(level));
      const ManifoldReport r = validate_manifold(m);
      EXPECT_TRUE(r.is_closed_manifold);
      EXPECT_TRUE(r.offending_edges.empty());
      EXPECT_GE(r.min_valence, 3);
      EXPECT_EQ(euler_characteristic(m), 2);
      ASSERT_EQ(m.uv_faces.size(), m.faces.size());
      for (const Face& f : m.uv_faces)
        for (int c : f) ASSERT_LT(c, int(m.uvs.size()));
      for (const Face& f : m.faces) {
        EXPECT_NE(f[0], f[1]);
        EXPECT_NE(f[1], f[2]);
        EXPECT_NE(f[0], f[2]);
      }
    }
}

TEST(Primitives, FacesWindOutward) {
  for (PrimitiveKind k : all_primitives()) {
    const ControlMesh m = make_primitive(k, 2);
    for (const Face& f : m.faces) {
      const Vec3 a = m.vertices.row(f[0]), b = m.vertices.row(f[1]), c = m.vertices.row(f[2]);
      EXPECT_GT((b - a).cross(c - a).dot(a + b + c), 0.0);
    }
  }
}

TEST(Primitives, UvRanges) {
  for (PrimitiveKind k : {PrimitiveKind::cuboid_horizontal, PrimitiveKind::cuboid_vertical}) {
    const ControlMesh m = make_primitive(k, 2);
    EXPECT_FALSE(m.wrap_u);
    for (const Vec2& t : m.uvs) {
      EXPECT_GE(t.x(), 0.0);
      EXPECT_LE(t.x(), 1.0);
      EXPECT_GE(t.y(), 0.0);
      EXPECT_LE(t.y(), 1.0);
    }
  }
  // the sphere's seam faces are unwrapped past u = 1 and sampled with wrap-around
  const ControlMesh s = make_primitive(PrimitiveKind::sphere, 2);
  EXPECT_TRUE(s.wrap_u);
  EXPECT_GT(s.uvs.size(), std::size_t(s.vertex_count()));
  for (const Vec2& t : s.uvs) {
    EXPECT_GE(t.x(), 0.0);
    EXPECT_LT(t.x(), 2.0);
    EXPECT_GE(t.y(), 0.0);
    EXPECT_LE(t.y(), 1.0);
  }
  for (const Face& f : s.uv_faces) {
    const double lo = std::min({s.uvs[f[0]].x(), s.uvs[f[1]].x(), s.uvs[f[2]].x()});
    const double hi = std::max({s.uvs[f[0]].x(), s.uvs[f[1]].x(), s.uvs[f[2]].x()});
    EXPECT_LT(hi - lo, 0.5) << "seam face not unwrapped";
  }
}

TEST(Primitives, BoxDiagonalsRunThroughLowestCorner) {
  const ControlMesh m = make_box({1, 1, 1}, 0);
  ASSERT_EQ(m.face_count(), 12);
  for (int q = 0; q < 6; ++q) {
    const Face& a = m.faces[2 * q];
    const Face& b = m.faces[2 * q + 1];
    std::set<int> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::vector<int> shared;
    for (int v : sa)
      if (sb.count(v)) shared.push_back(v);
    ASSERT_EQ(shared.size(), 2u);
    std::set<int> all(sa);
    all.insert(sb.begin(), sb.end());
    EXPECT_EQ(std::min(shared[0], shared[1]), *all.begin());
  }
}

TEST(OneRing, IcosahedronHasFiveNeighbours) {
  const ControlMesh m = make_icosahedron();
  for (int v = 0; v < m.vertex_count(); ++v) {
    const auto ring = one_ring(m, v);
    ASSERT_EQ(ring.size(), 5u);
    // consecutive ring entries span a face (v, r_i, r_i+1)
    for (std::size_t i = 0; i < ring.size(); ++i) {
      const int a = ring[i], b = ring[(i + 1) % ring.size()];
      bool found = false;
      for (const Face& f : m.faces)
        for (int c = 0; c < 3; ++c)
          if (f[c] == v && f[(c + 1) % 3] == a && f[(c + 2) % 3] == b) found = true;
      EXPECT_TRUE(found);
    }
  }
}

TEST(OneRing, BoxCornerValenceFollowsDiagonals) {
  const ControlMesh m = make_box({1.6, 0.8, 0.8}, 0);
  int total = 0;
  for (int v = 0; v < 8; ++v) {
    int on_diagonal = 0;
    for (int q = 0; q < 6; ++q) {
      const Face& a = m.faces[2 * q];
      const Face& b = m.faces[2 * q + 1];
      const bool in_a = std::find(a.begin(), a.end(), v) != a.end();
      const bool in_b = std::find(b.begin(), b.end(), v) != b.end();
      on_diagonal += in_a && in_b;
    }
    const auto ring = one_ring(m, v);
    EXPECT_EQ(int(ring.size()), 3 + on_diagonal) << "corner " << v;
    total += int(ring.size());
  }
  EXPECT_EQ(total, 2 * 18);  // twice the edge count
  // vertex 0 is the lowest index in all three of its quads
  EXPECT_EQ(one_ring(m, 0).size(), 6u);
}

TEST(OneRing, TetrahedronRingIsOtherThree) {
  const ControlMesh t = tetrahedron();
  for (int v = 0; v < 4; ++v) {
    auto ring = one_ring(t, v);
    std::sort(ring.begin(), ring.end());
    std::vector<int> expect;
    for (int w = 0; w < 4; ++w)
      if (w != v) expect.push_back(w);
    EXPECT_EQ(ring, expect);
  }
}

TEST(OneRing, ReversedOrientationReversesCycle) {
  ControlMesh m = make_icosphere(1);
  ControlMesh flipped = m;
  for (Face& f : flipped.faces) std::swap(f[1], f[2]);
  for (int v = 0; v < m.vertex_count(); ++v) {
    const auto a = one_ring(m, v);
    auto b = one_ring(flipped, v);
    std::reverse(b.begin(), b.end());
    // equal as cycles
    auto it = std::find(b.begin(), b.end(), a[0]);
    ASSERT_NE(it, b.end());
    std::rotate(b.begin(), it, b.end());
    EXPECT_EQ(a, b);
  }
}

TEST(OneRing, NonManifoldNeighbourhoodThrows) {
  ControlMesh two;
  two.vertices.resize(7, 3);
  two.vertices.setRandom();
  two.faces = {{0, 1, 2}, {0, 2, 3}, {0, 3, 1}, {1, 3, 2}, {0, 4, 5}, {0, 5, 6}, {0, 6, 4}, {4, 6, 5}};
  EXPECT_THROW(one_ring(two, 0), TopologyError);
  EXPECT_THROW(one_ring(two, 7), ParameterError);
}

TEST(Validate, Icosahedron) { EXPECT_TRUE(validate_manifold(make_icosahedron()).is_closed_manifold); }

TEST(Validate, RemovedFaceGivesThreeOffendingEdges) {
  ControlMesh m = make_icosahedron();
  m.faces.pop_back();
  m.uv_faces.pop_back();
  const ManifoldReport r = validate_manifold(m);
  EXPECT_FALSE(r.is_closed_manifold);
  EXPECT_EQ(r.offending_edges.size(), 3u);
}

TEST(Validate, TetrahedraSharingOneVertex) {
  ControlMesh two;
  two.vertices.resize(7, 3);
  two.vertices.setRandom();
  two.faces = {{0, 1, 2}, {0, 2, 3}, {0, 3, 1}, {1, 3, 2}, {0, 4, 5}, {0, 5, 6}, {0, 6, 4}, {4, 6, 5}};
  const ManifoldReport r = validate_manifold(two);
  EXPECT_TRUE(r.is_closed_manifold);
  EXPECT_TRUE(r.offending_edges.empty());
  EXPECT_EQ(r.max_valence, 3);
  EXPECT_EQ(r.min_valence, 3);
  EXPECT_EQ(r.singular_vertices, std::vector<int>{0});
}

TEST(Validate, RepeatedDirectedEdgeOffends) {
  ControlMesh t = tetrahedron();
  std::swap(t.faces[3][1], t.faces[3][2]);  // one face flipped
  const ManifoldReport r = validate_manifold(t);
  EXPECT_FALSE(r.is_closed_manifold);
  EXPECT_EQ(r.offending_edges.size(), 3u);
}

TEST(Validate, DegenerateFaceIsReported) {
  ControlMesh t = tetrahedron();
  t.faces.push_back({0, 0, 1});
  EXPECT_FALSE(validate_manifold(t).is_closed_manifold);
  t.faces.back() = {0, 1, 9};
  EXPECT_FALSE(validate_manifold(t).is_closed_manifold);
}

TEST(AssetIo, RoundTripPreservesTopologyAndPositions) {
  TempDir dir;
  ControlMesh m = make_icosphere(2);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 0.3);
  for (Eigen::Index i = 0; i < m.vertices.size(); ++i) m.vertices.data()[i] += n(rng);
  save_assets(m, m.vertices, constant_color_map(8, 8, {0.2, 0.4, 0.6}), flat_normal_map(8, 8), dir.path());
  const Assets a = load_assets(dir.path());
  EXPECT_EQ(a.mesh.faces, m.faces);
  EXPECT_EQ(a.mesh.uv_faces, m.uv_faces);
  EXPECT_EQ(a.mesh.wrap_u, m.wrap_u);
  ASSERT_EQ(a.mesh.vertices.rows(), m.vertices.rows());
  EXPECT_LE((a.mesh.vertices - m.vertices).cwiseAbs().maxCoeff(), 1e-5);
  ASSERT_EQ(a.mesh.uvs.size(), m.uvs.size());
  for (std::size_t i = 0; i < m.uvs.size(); ++i) EXPECT_LE((a.mesh.uvs[i] - m.uvs[i]).norm(), 1e-6);
  EXPECT_TRUE(std::filesystem::exists(dir / "model.mtl"));
}

TEST(AssetIo, IcosahedronRecordCounts) {
  TempDir dir;
  const ControlMesh m = make_icosahedron();
  save_assets(m, m.vertices, constant_color_map(2, 2, {1, 1, 1}), flat_normal_map(2, 2), dir.path());
  const std::string obj = meshforge::testing::read_file(dir / "model.obj");
  EXPECT_EQ(count_records(obj, "v"), 12);
  EXPECT_EQ(count_records(obj, "f"), 20);
  EXPECT_EQ(count_records(obj, "vt"), int(m.uvs.size()));
}

TEST(AssetIo, FlatNormalEncodesAs128_128_255) {
  TempDir dir;
  const ControlMesh m = make_icosahedron();
  save_assets(m, m.vertices, constant_color_map(4, 4, {1, 1, 1}), flat_normal_map(4, 4), dir.path());
  const Rgb8Image img = read_png(dir / "normal.png");
  ASSERT_EQ(img.pixels.size(), 4u * 4u * 3u);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_NEAR(img.pixels[3 * i], 128, 1);
    EXPECT_NEAR(img.pixels[3 * i + 1], 128, 1);
    EXPECT_NEAR(img.pixels[3 * i + 2], 255, 1);
  }
}

TEST(AssetIo, LimitVertexCountMustMatch) {
  TempDir dir;
  const ControlMesh m = make_icosahedron();
  EXPECT_THROW(save_assets(m, Positions::Zero(5, 3), constant_color_map(2, 2, {1, 1, 1}), flat_normal_map(2, 2), dir.path()),
               ParameterError);
}

TEST(AssetIo, UnwritablePathIsIoError) {
  TempDir dir;
  meshforge::testing::write_file(dir / "blocker", "x");
  const ControlMesh m = make_icosahedron();
  EXPECT_THROW(save_assets(m, m.vertices, constant_color_map(2, 2, {1, 1, 1}), flat_normal_map(2, 2), dir / "blocker" / "sub"),
               IoError);
}

TEST(AssetIo, MissingAssetIsIoError) {
  TempDir dir;
  EXPECT_THROW(load_assets(dir.path()), IoError);
}

TEST(LoadObj, QuadIsFanTriangulated) {
  TempDir dir;
  meshforge::testing::write_file(dir / "q.obj", "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n");
  const ControlMesh m = load_obj(dir / "q.obj");
  ASSERT_EQ(m.face_count(), 2);
  EXPECT_EQ(m.faces[0], (Face{0, 1, 2}));
  EXPECT_EQ(m.faces[1], (Face{0, 2, 3}));
  EXPECT_TRUE(m.uv_faces.empty());
}

TEST(LoadObj, DanglingIndexNamesTheLine) {
  TempDir dir;
  meshforge::testing::write_file(dir / "bad.obj", "# header\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\nf 1 2 7\n");
  try {
    load_obj(dir / "bad.obj");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 6u);
    EXPECT_NE(std::string(e.what()).find("line 6"), std::string::npos);
  }
}

TEST(LoadObj, MalformedVertexRecord) {
  TempDir dir;
  meshforge::testing::write_file(dir / "bad.obj", "v 0 0\n");
  EXPECT_THROW(load_obj(dir / "bad.obj"), ParseError);
}

TEST(LoadObj, NegativeIndicesAndSlashForms) {
  TempDir dir;
  meshforge::testing::write_file(dir / "n.obj",
                                 "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nvn 0 0 1\nf -3/-3/1 -2/-2/1 -1/-1/1\n");
  const ControlMesh m = load_obj(dir / "n.obj");
  ASSERT_EQ(m.face_count(), 1);
  EXPECT_EQ(m.faces[0], (Face{0, 1, 2}));
  EXPECT_EQ(m.uv_faces[0], (Face{0, 1, 2}));
}

TEST(LoadObj, StrictRejectsOpenMesh) {
  TempDir dir;
  meshforge::testing::write_file(dir / "open.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
  EXPECT_NO_THROW(load_obj(dir / "open.obj"));
  EXPECT_THROW(load_obj(dir / "open.obj", true), TopologyError);
  const ControlMesh ico = make_icosahedron();
  save_obj(dir / "ico.obj", ico, ico.vertices);
  EXPECT_NO_THROW(load_obj(dir / "ico.obj", true));
}

TEST(LoadObj, MissingFileIsIoError) { EXPECT_THROW(load_obj("/nonexistent/x.obj"), IoError); }
