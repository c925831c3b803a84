#pragma once

// The optimized parameters, per-iteration views, and the full objective
//   L = L_sim(render(S V0, T, Tn)) + lambda * L_lap(S V0)
// with gradients for V0, T, Tn (and an optional learned background colour).

#include <algorithm>
#include <memory>
#include <numeric>
#include <random>
#include <vector>

#include "cameras.hpp"
#include "errors.hpp"
#include "loss.hpp"
#include "raster.hpp"
#include "subdiv.hpp"

namespace meshforge {

struct Parameters {
  Positions V0;
  TexelMap texture;
  TexelMap normal_map;
  Vec3 background = Vec3::Zero();  // logits; used only with a learned background
};

struct RenderView {
  CameraPose pose;
  Image background;
  int view_id = -1;  // index into the scorer's target set, if it has one
};

// Fixed-size batches of views. Random sources follow the camera
// distribution; target sets replay the cameras of their target images.
class ViewSource {
 public:
  virtual ~ViewSource() = default;
  virtual std::vector<RenderView> sample(int count, std::mt19937_64& rng) = 0;
};

class RandomViews : public ViewSource {
 public:
  RandomViews(ViewConfig cfg, int resolution) : cfg_(std::move(cfg)), resolution_(resolution) {}

  std::vector<RenderView> sample(int count, std::mt19937_64& rng) override {
    std::vector<RenderView> out;
    for (int k = 0; k < count; ++k) {
      const ViewSample v = sample_view(rng, cfg_);
      out.push_back({camera_pose(v), make_background(v.background, resolution_), -1});
    }
    return out;
  }

 private:
  ViewConfig cfg_;
  int resolution_;
};

class FixedViews : public ViewSource {
 public:
  explicit FixedViews(std::vector<RenderView> views) : views_(std::move(views)) {
    if (views_.empty()) throw ParameterError("fixed view set is empty");
  }

  // Distinct views while count <= size (partial Fisher-Yates), then repeats.
  std::vector<RenderView> sample(int count, std::mt19937_64& rng) override {
    std::vector<int> idx(views_.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<RenderView> out;
    for (int k = 0; k < count; ++k) {
      const int slot = k % int(idx.size());
      std::uniform_int_distribution<int> pick(slot, int(idx.size()) - 1);
      std::swap(idx[slot], idx[pick(rng)]);
      out.push_back(views_[idx[slot]]);
    }
    return out;
  }

  const std::vector<RenderView>& views() const { return views_; }

 private:
  std::vector<RenderView> views_;
};

struct ObjectiveResult {
  double total = 0;
  double similarity = 0;
  double laplacian = 0;
  double lambda = 0;
  Positions grad_V0;
  TexelMap grad_texture;
  TexelMap grad_normal_map;
  Vec3 grad_background = Vec3::Zero();
  std::vector<Image> images;
  ScoreResult score;
};

struct ObjectiveContext {
  const SubdivisionOperator* subdiv = nullptr;
  const LaplacianOperator* laplacian = nullptr;
  RenderConfig render;
  bool learned_background = false;
};

inline ObjectiveResult total_objective(const ObjectiveContext& ctx, const Parameters& params,
                                       const std::vector<RenderView>& views, Scorer& scorer, double lambda,
                                       bool want_grad = true) {
  if (!ctx.subdiv || !ctx.laplacian) throw ParameterError("objective: operators not set");
  if (views.empty()) throw ParameterError("objective: no views");
  const SubdivisionOperator& S = *ctx.subdiv;
  const Positions V = apply(S, params.V0);
  const auto material = Material::make(params.texture, params.normal_map);
  const int res = ctx.render.resolution;
  Image learned_bg;
  if (ctx.learned_background)
    learned_bg = Image::solid(res, res, Vec3(sigmoid(params.background[0]), sigmoid(params.background[1]),
                                             sigmoid(params.background[2])));

  ObjectiveResult out;
  out.lambda = lambda;
  std::vector<RenderTape> tapes;
  std::vector<int> ids;
  for (const RenderView& view : views) {
    auto r = render(V, S.refined, material, view.pose, ctx.learned_background ? learned_bg : view.background, ctx.render);
    out.images.push_back(std::move(r.image));
    if (want_grad) tapes.push_back(std::move(r.tape));
    ids.push_back(view.view_id);
  }
  out.score = scorer.score(out.images, ids, want_grad);
  out.similarity = out.score.loss;
  const LaplacianResult lap = laplacian_loss(*ctx.laplacian, V, want_grad && lambda != 0);
  out.laplacian = lap.loss;
  out.total = out.similarity + lambda * out.laplacian;
  if (!want_grad) return out;
  if (out.score.grad_images.size() != views.size()) throw ProtocolError("scorer returned no gradients");

  Positions gV = Positions::Zero(V.rows(), 3);
  DecodedMap gt(params.texture.width, params.texture.height);
  DecodedMap gn(params.normal_map.width, params.normal_map.height);
  for (std::size_t k = 0; k < views.size(); ++k) {
    const DecodedRenderGrads g = render_backward_decoded(tapes[k], out.score.grad_images[k]);
    gV += g.vertices;
    for (std::size_t i = 0; i < gt.values.size(); ++i) gt.values[i] += g.texture.values[i];
    for (std::size_t i = 0; i < gn.values.size(); ++i) gn.values[i] += g.normal_map.values[i];
    if (ctx.learned_background)
      for (std::size_t i = 0; i < g.background.size(); ++i) out.grad_background[i % 3] += g.background[i];
  }
  if (lambda != 0) gV += lambda * lap.grad;
  out.grad_V0 = apply_adjoint(S, gV);
  out.grad_texture = decode_backward(params.texture, gt);
  out.grad_normal_map = decode_backward(params.normal_map, gn);
  for (int c = 0; c < 3; ++c) {
    const double s = sigmoid(params.background[c]);
    out.grad_background[c] *= s * (1 - s);
  }
  return out;
}

}  // namespace meshforge
