#pragma once

// Finite-difference checks of every hand-written reverse pass.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cameras.hpp"
#include "loss.hpp"
#include "mesh.hpp"
#include "objective.hpp"
#include "raster.hpp"
#include "subdiv.hpp"

namespace meshforge {

struct GradcheckResult {
  std::string component;
  double error = 0;  // |analytic - fd| / |fd| over the probed coordinates
  double threshold = 0;
  int probes = 0;

  bool pass() const { return error < threshold; }
};

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::string inject_fault;  // component whose analytic gradient gets its sign flipped
};

namespace detail {

struct ErrorAccum {
  double diff2 = 0, ref2 = 0;
  int n = 0;
  void add(double analytic, double fd) {
    diff2 += (analytic - fd) * (analytic - fd);
    ref2 += fd * fd;
    ++n;
  }
  double rel() const { return std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-300); }
};

inline double central_difference(const std::function<double(double)>& f, double h) {
  return (f(h) - f(-h)) / (2 * h);
}

inline std::vector<double> random_weights(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> w(n);
  for (double& x : w) x = u(rng);
  return w;
}

inline double weighted_sum(const std::vector<double>& w, const std::vector<double>& x) {
  double s = 0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x[i];
  return s;
}

inline ControlMesh jittered_icosahedron(std::mt19937_64& rng, double amount = 0.1) {
  ControlMesh m = make_icosahedron();
  std::uniform_real_distribution<double> u(-amount, amount);
  for (Eigen::Index i = 0; i < m.vertices.rows(); ++i) m.vertices.row(i) *= 1.0 + u(rng);
  return m;
}

// Texel indices worth probing: the most strongly weighted ones plus a few random ones.
inline std::vector<std::size_t> texel_probes(const std::vector<double>& grad, int count, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(grad.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const std::size_t top = std::min<std::size_t>(std::size_t(count / 2), idx.size());
  std::partial_sort(idx.begin(), idx.begin() + long(top), idx.end(),
                    [&](std::size_t a, std::size_t b) { return std::abs(grad[a]) > std::abs(grad[b]); });
  std::vector<std::size_t> out(idx.begin(), idx.begin() + long(top));
  std::uniform_int_distribution<std::size_t> pick(0, grad.size() - 1);
  while (int(out.size()) < count) out.push_back(pick(rng));
  return out;
}

}  // namespace detail

// f(V0) = sum W .* (S V0)^2 through the depth-2 operator of a jittered icosahedron.
inline GradcheckResult gradcheck_subdivision(const GradcheckOptions& opt) {
  std::mt19937_64 rng(opt.seed ^ 0x51);
  const ControlMesh mesh = detail::jittered_icosahedron(rng);
  const SubdivisionOperator op = build_operator(mesh, 2);
  Positions W(op.refined_count(), 3);
  for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = std::uniform_real_distribution<double>(-1, 1)(rng);
  auto f = [&](const Positions& V0) { return (W.array() * apply(op, V0).array().square()).sum(); };
  Positions grad = apply_adjoint(op, Positions(2 * W.array() * apply(op, mesh.vertices).array()));
  if (opt.inject_fault == "subdivision") grad = -grad;
  detail::ErrorAccum acc;
  for (Eigen::Index i = 0; i < mesh.vertices.size(); ++i) {
    const double fd = detail::central_difference(
        [&](double h) {
          Positions V = mesh.vertices;
          V.data()[i] += h;
          return f(V);
        },
        1e-5);
    acc.add(grad.data()[i], fd);
  }
  return {"subdivision", acc.rel(), 1e-6, acc.n};
}

// Uniform Laplacian energy on a jittered level-1 icosphere.
inline GradcheckResult gradcheck_laplacian(const GradcheckOptions& opt) {
  std::mt19937_64 rng(opt.seed ^ 0x1a);
  ControlMesh mesh = make_icosphere(1);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (Eigen::Index i = 0; i < mesh.vertices.size(); ++i) mesh.vertices.data()[i] += u(rng);
  const LaplacianOperator op = LaplacianOperator::build(mesh);
  Positions grad = laplacian_loss(op, mesh.vertices).grad;
  if (opt.inject_fault == "laplacian") grad = -grad;
  detail::ErrorAccum acc;
  for (Eigen::Index i = 0; i < mesh.vertices.size(); ++i) {
    const double fd = detail::central_difference(
        [&](double h) {
          Positions V = mesh.vertices;
          V.data()[i] += h;
          return laplacian_loss(op, V, false).loss;
        },
        1e-5);
    acc.add(grad.data()[i], fd);
  }
  return {"laplacian", acc.rel(), 1e-6, acc.n};
}

namespace detail {

// Jittered icosahedron, 32x32 maps, 64x64 render, random pixel weights.
struct RasterScene {
  ControlMesh mesh;
  TexelMap texture, normal_map;
  CameraPose pose;
  Image background;
  RenderConfig cfg;
  std::vector<double> weights;

  explicit RasterScene(std::uint64_t seed, bool flat_normals) {
    std::mt19937_64 rng(seed);
    mesh = jittered_icosahedron(rng);
    texture = random_color_map(32, 32, 0.5, rng);
    normal_map = flat_normals ? flat_normal_map(32, 32) : random_normal_map(32, 32, 0.05, rng);
    ViewSample v;
    v.azimuth = 25;
    v.elevation = 20;
    v.fov = 45;
    pose = camera_pose(v);
    cfg.resolution = 64;
    cfg.sigma = 0.03;
    background = Image::solid(64, 64, Vec3(0.2, 0.5, 0.8));
    weights = random_weights(std::size_t(64) * 64 * 3, rng);
  }

  double loss(const Positions& V, const TexelMap& t, const TexelMap& n) const {
    return weighted_sum(weights, render(V, mesh, Material::make(t, n), pose, background, cfg).image.rgb);
  }

  RenderGrads grads() const {
    const auto r = render(mesh.vertices, mesh, Material::make(texture, normal_map), pose, background, cfg);
    return render_backward(r.tape, weights);
  }
};

}  // namespace detail

inline GradcheckResult gradcheck_texture(const GradcheckOptions& opt) {
  const detail::RasterScene s(opt.seed ^ 0x7e, false);
  RenderGrads g = s.grads();
  if (opt.inject_fault == "texture")
    for (double& x : g.texture.data) x = -x;
  std::mt19937_64 rng(opt.seed);
  detail::ErrorAccum acc;
  for (std::size_t i : detail::texel_probes(g.texture.data, 60, rng)) {
    const double fd = detail::central_difference(
        [&](double h) {
          TexelMap t = s.texture;
          t.data[i] += h;
          return s.loss(s.mesh.vertices, t, s.normal_map);
        },
        1e-5);
    acc.add(g.texture.data[i], fd);
  }
  return {"texture", acc.rel(), 1e-4, acc.n};
}

inline GradcheckResult gradcheck_normal_map(const GradcheckOptions& opt) {
  const detail::RasterScene s(opt.seed ^ 0x4a, false);
  RenderGrads g = s.grads();
  if (opt.inject_fault == "normal_map")
    for (double& x : g.normal_map.data) x = -x;
  std::mt19937_64 rng(opt.seed);
  detail::ErrorAccum acc;
  for (std::size_t i : detail::texel_probes(g.normal_map.data, 60, rng)) {
    const double fd = detail::central_difference(
        [&](double h) {
          TexelMap n = s.normal_map;
          n.data[i] += h;
          return s.loss(s.mesh.vertices, s.texture, n);
        },
        1e-5);
    acc.add(g.normal_map.data[i], fd);
  }
  return {"normal_map", acc.rel(), 1e-4, acc.n};
}

// All vertex coordinates. The normal map is flat so the shading has no
// per-face tangent seams for the finite differences to straddle.
inline GradcheckResult gradcheck_vertices(const GradcheckOptions& opt) {
  const detail::RasterScene s(opt.seed ^ 0xe4, true);
  RenderGrads g = s.grads();
  if (opt.inject_fault == "vertices") g.vertices = -g.vertices;
  detail::ErrorAccum acc;
  for (Eigen::Index i = 0; i < s.mesh.vertices.size(); ++i) {
    const double fd = detail::central_difference(
        [&](double h) {
          Positions V = s.mesh.vertices;
          V.data()[i] += h;
          return s.loss(V, s.texture, s.normal_map);
        },
        1e-5);
    acc.add(g.vertices.data()[i], fd);
  }
  return {"vertices", acc.rel(), 1e-2, acc.n};
}

// Full objective: icosahedron at depth 0, 16x16 maps, two 48x48 views,
// target scorer against renders of a perturbed copy, lambda = 0.5.
inline GradcheckResult gradcheck_objective(const GradcheckOptions& opt) {
  std::mt19937_64 rng(opt.seed ^ 0x0b);
  const ControlMesh mesh = detail::jittered_icosahedron(rng);
  const SubdivisionOperator op = build_operator(mesh, 0);
  const LaplacianOperator lap = LaplacianOperator::build(op.refined);
  ObjectiveContext ctx{&op, &lap, RenderConfig{}, false};
  ctx.render.resolution = 48;
  ctx.render.sigma = 0.04;

  Parameters p;
  p.V0 = mesh.vertices;
  p.texture = random_color_map(16, 16, 0.5, rng);
  p.normal_map = flat_normal_map(16, 16);

  std::vector<RenderView> views;
  for (int k = 0; k < 2; ++k) {
    ViewSample v;
    v.azimuth = 40.0 + 130.0 * k;
    v.elevation = 15.0 + 10.0 * k;
    v.fov = 45;
    views.push_back({camera_pose(v), Image::solid(48, 48, Vec3(0.3, 0.6, 0.9)), k});
  }
  Parameters target = p;
  target.V0 *= 1.1;
  target.texture = random_color_map(16, 16, 0.5, rng);
  std::vector<Image> targets;
  {
    const Positions Vt = apply(op, target.V0);
    const auto material = Material::make(target.texture, target.normal_map);
    for (const RenderView& v : views) targets.push_back(render(Vt, op.refined, material, v.pose, v.background, ctx.render).image);
  }
  TargetImageScorer target_scorer(std::move(targets));
  const double lambda = 0.5;
  ObjectiveResult r = total_objective(ctx, p, views, target_scorer, lambda);
  if (opt.inject_fault == "objective") r.grad_V0 = -r.grad_V0;
  auto f = [&](const Parameters& q) { return total_objective(ctx, q, views, target_scorer, lambda, false).total; };

  detail::ErrorAccum acc;
  for (Eigen::Index i = 0; i < p.V0.size(); ++i) {
    const double fd = detail::central_difference(
        [&](double h) {
          Parameters q = p;
          q.V0.data()[i] += h;
          return f(q);
        },
        1e-5);
    acc.add(r.grad_V0.data()[i], fd);
  }
  for (std::size_t i : detail::texel_probes(r.grad_texture.data, 20, rng)) {
    const double fd = detail::central_difference(
        [&](double h) {
          Parameters q = p;
          q.texture.data[i] += h;
          return f(q);
        },
        1e-5);
    acc.add(r.grad_texture.data[i], fd);
  }
  for (std::size_t i : detail::texel_probes(r.grad_normal_map.data, 20, rng)) {
    const double fd = detail::central_difference(
        [&](double h) {
          Parameters q = p;
          q.normal_map.data[i] += h;
          return f(q);
        },
        1e-5);
    acc.add(r.grad_normal_map.data[i], fd);
  }
  return {"objective", acc.rel(), 2e-2, acc.n};
}

inline std::vector<std::string> gradcheck_components() {
  return {"subdivision", "laplacian", "texture", "normal_map", "vertices", "objective"};
}

inline std::vector<GradcheckResult> run_gradchecks(const GradcheckOptions& opt) {
  return {gradcheck_subdivision(opt), gradcheck_laplacian(opt), gradcheck_texture(opt),
          gradcheck_normal_map(opt), gradcheck_vertices(opt), gradcheck_objective(opt)};
}

}  // namespace meshforge
