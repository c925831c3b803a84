#pragma once

// Loop limit subdivision as one precomputed sparse linear map.
//
// The operator composes `depth` Loop refinement steps with the limit-point
// stencil, so S * V0 gives points on the limit surface at the refined
// vertices. Because S depends only on connectivity, the backward pass is
// S^T and both directions are exact.

#include <Eigen/SparseCore>

#include <cmath>
#include <numbers>
#include <string>
#include <unordered_map>
#include <vector>

#include "errors.hpp"
#include "mesh.hpp"

namespace meshforge {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Loop's vertex weight: beta(n) = (1/n) [5/8 - (3/8 + 1/4 cos(2 pi / n))^2].
inline double loop_beta(int n) {
  if (n < 3) throw ParameterError("loop_beta: valence must be >= 3, got " + std::to_string(n));
  const double c = 3.0 / 8.0 + 0.25 * std::cos(2.0 * std::numbers::pi / n);
  return (5.0 / 8.0 - c * c) / n;
}

struct SubdivisionOperator {
  SparseMatrix matrix;  // refined_count x control_count
  // Refined connectivity and UVs. `refined.vertices` holds the limit
  // positions of the mesh the operator was built from.
  ControlMesh refined;
  int depth = 0;

  Eigen::Index control_count() const { return matrix.cols(); }
  Eigen::Index refined_count() const { return matrix.rows(); }
};

namespace detail {

struct RefinedTopology {
  int vertex_count = 0;
  std::vector<Face> faces;
  std::vector<Vec2> uvs;
  std::vector<Face> uv_faces;
};

// One Loop step: returns the (n + E) x n stencil matrix and writes the
// refined connectivity into `next`. Even vertices keep their indices; the
// vertex on edge e gets index n + e.
inline SparseMatrix loop_refine(const RefinedTopology& cur, RefinedTopology& next) {
  const MeshTopology topo = MeshTopology::build(cur.vertex_count, cur.faces);
  const int n = cur.vertex_count;
  const int ne = int(topo.edges.size());
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(std::size_t(n) * 7 + std::size_t(ne) * 4);
  for (int v = 0; v < n; ++v) {
    const auto& ring = topo.rings[v];
    const int k = int(ring.size());
    const double beta = loop_beta(k);
    trips.emplace_back(v, v, 1.0 - k * beta);
    for (int w : ring) trips.emplace_back(v, w, beta);
  }
  for (int e = 0; e < ne; ++e) {
    const int row = n + e;
    trips.emplace_back(row, topo.edges[e][0], 3.0 / 8.0);
    trips.emplace_back(row, topo.edges[e][1], 3.0 / 8.0);
    trips.emplace_back(row, topo.opposite[e][0], 1.0 / 8.0);
    trips.emplace_back(row, topo.opposite[e][1], 1.0 / 8.0);
  }
  SparseMatrix R(n + ne, n);
  R.setFromTriplets(trips.begin(), trips.end());

  next.vertex_count = n + ne;
  next.faces.clear();
  next.faces.reserve(cur.faces.size() * 4);
  const bool has_uv = !cur.uv_faces.empty();
  next.uvs = cur.uvs;
  next.uv_faces.clear();
  // midpoint UVs are keyed by the coarse UV pair, so seams stay duplicated
  std::unordered_map<std::uint64_t, int> uv_mid;
  auto mid_uv = [&](int a, int b) {
    auto [it, inserted] = uv_mid.emplace(edge_key(a, b), int(next.uvs.size()));
    if (inserted) next.uvs.push_back(0.5 * (cur.uvs[a] + cur.uvs[b]));
    return it->second;
  };
  for (std::size_t f = 0; f < cur.faces.size(); ++f) {
    const Face& t = cur.faces[f];
    const int ab = n + topo.edge_index(t[0], t[1]);
    const int bc = n + topo.edge_index(t[1], t[2]);
    const int ca = n + topo.edge_index(t[2], t[0]);
    next.faces.push_back({t[0], ab, ca});
    next.faces.push_back({t[1], bc, ab});
    next.faces.push_back({t[2], ca, bc});
    next.faces.push_back({ab, bc, ca});
    if (has_uv) {
      const Face& u = cur.uv_faces[f];
      const int uab = mid_uv(u[0], u[1]), ubc = mid_uv(u[1], u[2]), uca = mid_uv(u[2], u[0]);
      next.uv_faces.push_back({u[0], uab, uca});
      next.uv_faces.push_back({u[1], ubc, uab});
      next.uv_faces.push_back({u[2], uca, ubc});
      next.uv_faces.push_back({uab, ubc, uca});
    }
  }
  return R;
}

// Limit-point stencil: v_inf = (l v + sum(ring)) / (l + n), l = 3 / (8 beta(n)).
inline SparseMatrix limit_stencil(const RefinedTopology& cur) {
  const MeshTopology topo = MeshTopology::build(cur.vertex_count, cur.faces);
  std::vector<Eigen::Triplet<double>> trips;
  for (int v = 0; v < cur.vertex_count; ++v) {
    const auto& ring = topo.rings[v];
    const int k = int(ring.size());
    const double l = 3.0 / (8.0 * loop_beta(k));
    trips.emplace_back(v, v, l / (l + k));
    for (int w : ring) trips.emplace_back(v, w, 1.0 / (l + k));
  }
  SparseMatrix L(cur.vertex_count, cur.vertex_count);
  L.setFromTriplets(trips.begin(), trips.end());
  return L;
}

}  // namespace detail

inline Positions apply(const SubdivisionOperator& op, const Positions& control) {
  if (control.rows() != op.control_count())
    throw ParameterError("subdivision apply: expected " + std::to_string(op.control_count()) + " control vertices, got " +
                         std::to_string(control.rows()));
  return op.matrix * control;
}

inline Positions apply_adjoint(const SubdivisionOperator& op, const Positions& grad_refined) {
  if (grad_refined.rows() != op.refined_count())
    throw ParameterError("subdivision adjoint: expected " + std::to_string(op.refined_count()) + " rows, got " +
                         std::to_string(grad_refined.rows()));
  return op.matrix.transpose() * grad_refined;
}

inline SubdivisionOperator build_operator(const ControlMesh& mesh, int depth) {
  if (depth < 0 || depth > 4) throw ParameterError("subdivision depth must be in [0, 4], got " + std::to_string(depth));
  detail::RefinedTopology cur{mesh.vertex_count(), mesh.faces, mesh.uvs, mesh.uv_faces};
  SparseMatrix S(cur.vertex_count, cur.vertex_count);
  S.setIdentity();
  for (int d = 0; d < depth; ++d) {
    detail::RefinedTopology next;
    const SparseMatrix R = detail::loop_refine(cur, next);
    S = (R * S).pruned();
    cur = std::move(next);
  }
  S = (detail::limit_stencil(cur) * S).pruned();
  S.makeCompressed();

  SubdivisionOperator op;
  op.matrix = std::move(S);
  op.depth = depth;
  op.refined.faces = std::move(cur.faces);
  op.refined.uvs = std::move(cur.uvs);
  op.refined.uv_faces = std::move(cur.uv_faces);
  op.refined.wrap_u = mesh.wrap_u;
  op.refined.vertices = op.matrix * mesh.vertices;
  return op;
}

}  // namespace meshforge
