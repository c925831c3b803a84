#pragma once

// Brute-force Loop subdivision on positions, written independently of
// meshforge's stencil matrices, for cross-checking the operator.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_map>
#include <vector>

#include "meshforge/mesh.hpp"

namespace meshforge::testing {

struct PlainMesh {
  std::vector<Vec3> points;
  std::vector<Face> faces;
};

inline double oracle_beta(int n) {
  const double c = 0.375 + 0.25 * std::cos(2 * std::numbers::pi / n);
  return (0.625 - c * c) / n;
}

inline std::vector<std::vector<int>> oracle_neighbours(const PlainMesh& m) {
  std::vector<std::vector<int>> nb(m.points.size());
  for (const Face& f : m.faces)
    for (int c = 0; c < 3; ++c) nb[f[c]].push_back(f[(c + 1) % 3]);
  return nb;  // on a closed manifold each neighbour appears exactly once
}

inline PlainMesh oracle_refine(const PlainMesh& m) {
  const int n = int(m.points.size());
  const auto nb = oracle_neighbours(m);
  PlainMesh out;
  out.points.resize(n);
  for (int v = 0; v < n; ++v) {
    const int k = int(nb[v].size());
    const double b = oracle_beta(k);
    Vec3 s = Vec3::Zero();
    for (int w : nb[v]) s += m.points[w];
    out.points[v] = (1 - k * b) * m.points[v] + b * s;
  }
  std::unordered_map<std::uint64_t, int> third;  // directed edge -> opposite vertex
  third.reserve(m.faces.size() * 3);
  for (const Face& f : m.faces)
    for (int c = 0; c < 3; ++c) third[directed_key(f[c], f[(c + 1) % 3])] = f[(c + 2) % 3];
  std::unordered_map<std::uint64_t, int> mid;
  mid.reserve(m.faces.size() * 2);
  auto edge_point = [&](int a, int b) {
    auto [it, inserted] = mid.emplace(edge_key(a, b), int(out.points.size()));
    if (inserted) {
      const int c = third.at(directed_key(a, b)), d = third.at(directed_key(b, a));
      out.points.push_back(0.375 * (m.points[a] + m.points[b]) + 0.125 * (m.points[c] + m.points[d]));
    }
    return it->second;
  };
  out.faces.reserve(m.faces.size() * 4);
  for (const Face& f : m.faces) {
    const int ab = edge_point(f[0], f[1]), bc = edge_point(f[1], f[2]), ca = edge_point(f[2], f[0]);
    out.faces.push_back({f[0], ab, ca});
    out.faces.push_back({f[1], bc, ab});
    out.faces.push_back({f[2], ca, bc});
    out.faces.push_back({ab, bc, ca});
  }
  return out;
}

inline std::vector<Vec3> oracle_limit(const PlainMesh& m) {
  const auto nb = oracle_neighbours(m);
  std::vector<Vec3> out(m.points.size());
  for (std::size_t v = 0; v < m.points.size(); ++v) {
    const int k = int(nb[v].size());
    const double l = 3.0 / (8.0 * oracle_beta(k));
    Vec3 s = Vec3::Zero();
    for (int w : nb[v]) s += m.points[w];
    out[v] = (l * m.points[v] + s) / (l + k);
  }
  return out;
}

inline PlainMesh to_plain(const ControlMesh& m) {
  PlainMesh p;
  for (Eigen::Index i = 0; i < m.vertices.rows(); ++i) p.points.push_back(m.vertices.row(i).transpose());
  p.faces = m.faces;
  return p;
}

// Max distance between each operator limit vertex and its nearest oracle
// vertex among those present after `depth` rounds, with the oracle refined
// `rounds` times in total before the limit stencil. Also reports whether
// the nearest-neighbour matching is a bijection.
struct OracleComparison {
  double max_deviation = 0;
  bool bijective = false;
};

inline OracleComparison compare_with_oracle(const ControlMesh& control, const Positions& limit, int depth, int rounds) {
  PlainMesh m = to_plain(control);
  std::size_t keep = m.points.size();
  for (int r = 0; r < rounds; ++r) {
    m = oracle_refine(m);
    if (r + 1 == depth) keep = m.points.size();
  }
  if (depth == 0) keep = control.vertices.rows();
  const std::vector<Vec3> lim = oracle_limit(m);
  OracleComparison cmp;
  std::vector<int> hits(keep, 0);
  for (Eigen::Index i = 0; i < limit.rows(); ++i) {
    const Vec3 p = limit.row(i).transpose();
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < keep; ++j) {
      const double d = (lim[j] - p).squaredNorm();
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    ++hits[arg];
    cmp.max_deviation = std::max(cmp.max_deviation, std::sqrt(best));
  }
  cmp.bijective = std::size_t(limit.rows()) == keep && std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; });
  return cmp;
}

}  // namespace meshforge::testing
