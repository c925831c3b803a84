#pragma once

// Similarity loss, uniform Laplacian regularizer, lambda schedule, and the
// scorer interface with the built-in target-image scorer.

#include <Eigen/SparseCore>

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "errors.hpp"
#include "mesh.hpp"
#include "types.hpp"

namespace meshforge {

// Negative mean cosine similarity between unit embeddings and e_t.
inline double similarity_loss(const std::vector<std::vector<double>>& embeddings, const std::vector<double>& e_t) {
  if (embeddings.empty()) throw ContractError("similarity_loss: no embeddings");
  auto check_unit = [](const std::vector<double>& v, const std::string& what) {
    double n2 = 0;
    for (double x : v) n2 += x * x;
    if (!(std::abs(std::sqrt(n2) - 1.0) <= 1e-4))
      throw ContractError("similarity_loss: " + what + " is not unit-norm (|v| = " + std::to_string(std::sqrt(n2)) + ")");
  };
  check_unit(e_t, "text embedding");
  double sum = 0;
  for (std::size_t k = 0; k < embeddings.size(); ++k) {
    if (embeddings[k].size() != e_t.size()) throw ContractError("similarity_loss: embedding dimension mismatch");
    check_unit(embeddings[k], "embedding " + std::to_string(k));
    double dot = 0;
    for (std::size_t i = 0; i < e_t.size(); ++i) dot += embeddings[k][i] * e_t[i];
    sum += dot;
  }
  return -sum / double(embeddings.size());
}

struct PromptContext {
  std::string prompt;
  std::vector<double> embedding;
  std::string scorer_id;

  void validate() const {
    double n2 = 0;
    for (double x : embedding) n2 += x * x;
    if (!(std::abs(std::sqrt(n2) - 1.0) <= 1e-4)) throw ContractError("prompt embedding is not unit-norm");
  }
};

// ---------------------------------------------------------------------------
// Laplacian

// delta = (I - A) V with A the uniform one-ring average.
struct LaplacianOperator {
  Eigen::SparseMatrix<double, Eigen::RowMajor> matrix;  // I - A
  std::vector<std::vector<int>> rings;

  static LaplacianOperator build(int vertex_count, const std::vector<Face>& faces) {
    const MeshTopology topo = MeshTopology::build(vertex_count, faces);
    std::vector<Eigen::Triplet<double>> trips;
    for (int v = 0; v < vertex_count; ++v) {
      const auto& ring = topo.rings[v];
      trips.emplace_back(v, v, 1.0);
      for (int w : ring) trips.emplace_back(v, w, -1.0 / double(ring.size()));
    }
    LaplacianOperator op;
    op.matrix.resize(vertex_count, vertex_count);
    op.matrix.setFromTriplets(trips.begin(), trips.end());
    op.rings = topo.rings;
    return op;
  }

  static LaplacianOperator build(const ControlMesh& mesh) { return build(mesh.vertex_count(), mesh.faces); }
};

struct LaplacianResult {
  double loss = 0;
  Positions grad;
};

// L = (1/N) sum |delta_i|^2, grad = (2/N) M^T M V.
inline LaplacianResult laplacian_loss(const LaplacianOperator& op, const Positions& V, bool want_grad = true) {
  if (V.rows() != op.matrix.cols())
    throw ParameterError("laplacian_loss: expected " + std::to_string(op.matrix.cols()) + " vertices, got " +
                         std::to_string(V.rows()));
  // delta_i = mean over the ring of (v_i - v_j)
  Positions delta(V.rows(), 3);
  for (Eigen::Index v = 0; v < V.rows(); ++v) {
    Eigen::RowVector3d d = Eigen::RowVector3d::Zero();
    for (int w : op.rings[v]) d += V.row(v) - V.row(w);
    delta.row(v) = op.rings[v].empty() ? Eigen::RowVector3d::Zero() : Eigen::RowVector3d(d / double(op.rings[v].size()));
  }
  const double n = double(V.rows());
  LaplacianResult r;
  r.loss = delta.squaredNorm() / n;
  if (want_grad) r.grad = (2.0 / n) * (op.matrix.transpose() * delta);
  return r;
}

inline double laplacian_loss(const Positions& V, const std::vector<Face>& faces) {
  return laplacian_loss(LaplacianOperator::build(int(V.rows()), faces), V, false).loss;
}

// ---------------------------------------------------------------------------
// lambda schedule: lambda_t = (lambda_{t-1} - lambda_min) 10^(-k t) + lambda_min

struct LambdaSchedule {
  double lambda0 = 30.0;
  double lambda_min = 0.6;
  double k = 1e-6;
  double lambda = 30.0;
  long long t = 0;

  static LambdaSchedule make(double lambda0, double k = 1e-6) {
    if (!(lambda0 >= 0) || !std::isfinite(lambda0)) throw ParameterError("lambda0 must be finite and >= 0");
    if (!(k > 0)) throw ParameterError("lambda decay k must be > 0");
    LambdaSchedule s;
    s.lambda0 = lambda0;
    s.lambda_min = 0.02 * lambda0;
    s.k = k;
    s.lambda = lambda0;
    s.t = 0;
    return s;
  }
};

inline LambdaSchedule lambda_step(LambdaSchedule s) {
  s.t += 1;
  const double prev = s.lambda;
  s.lambda = (s.lambda - s.lambda_min) * std::pow(10.0, -s.k * double(s.t)) + s.lambda_min;
  // no stalling one ulp above the floor
  if (prev > s.lambda_min && s.lambda >= prev) s.lambda = std::nextafter(prev, s.lambda_min);
  return s;
}

// ---------------------------------------------------------------------------
// scorers

struct ScoreResult {
  double loss = 0;
  std::vector<double> similarities;
  std::vector<std::vector<double>> grad_images;  // per image, H*W*3; empty when not requested
};

class Scorer {
 public:
  virtual ~Scorer() = default;
  // `view_ids` tags each image with the view it was rendered from; scorers
  // that compare against per-view targets use it, others ignore it.
  virtual ScoreResult score(const std::vector<Image>& images, const std::vector<int>& view_ids, bool want_grad) = 0;
  virtual std::string id() const = 0;
};

namespace detail {

struct Embedding {
  std::vector<double> e;
  double norm = 0;  // sqrt(|c|^2 + eps)
};

constexpr double embedding_eps = 1e-12;

inline Embedding image_embedding(const Image& img) {
  Embedding out;
  const std::size_t n = img.rgb.size();
  if (n == 0) throw ParameterError("cannot embed an empty image");
  double mean = 0;
  for (double x : img.rgb) mean += x;
  mean /= double(n);
  out.e.resize(n);
  double n2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out.e[i] = img.rgb[i] - mean;
    n2 += out.e[i] * out.e[i];
  }
  out.norm = std::sqrt(n2 + embedding_eps);
  for (double& x : out.e) x /= out.norm;
  return out;
}

}  // namespace detail

// Embedding = mean-subtracted, L2-normalised flattened rgb. Image k is
// compared against targets[k].
inline ScoreResult target_image_scorer(const std::vector<Image>& images, const std::vector<Image>& targets,
                                       bool want_grad = true) {
  if (images.size() != targets.size())
    throw ParameterError("target scorer: " + std::to_string(images.size()) + " images vs " +
                         std::to_string(targets.size()) + " targets");
  if (images.empty()) throw ParameterError("target scorer: no images");
  ScoreResult r;
  const double K = double(images.size());
  for (std::size_t k = 0; k < images.size(); ++k) {
    if (images[k].width != targets[k].width || images[k].height != targets[k].height)
      throw ParameterError("target scorer: image " + std::to_string(k) + " shape does not match its target");
    const auto ie = detail::image_embedding(images[k]);
    const auto te = detail::image_embedding(targets[k]);
    double s = 0;
    for (std::size_t i = 0; i < ie.e.size(); ++i) s += ie.e[i] * te.e[i];
    r.similarities.push_back(s);
    r.loss -= s / K;
    if (want_grad) {
      // d s / d x = P (t - s e) / norm, P = mean-removal projector
      std::vector<double> g(ie.e.size());
      double mean = 0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = (te.e[i] - s * ie.e[i]) / ie.norm;
        mean += g[i];
      }
      mean /= double(g.size());
      for (double& x : g) x = -(x - mean) / K;
      r.grad_images.push_back(std::move(g));
    }
  }
  return r;
}

class TargetImageScorer : public Scorer {
 public:
  explicit TargetImageScorer(std::vector<Image> targets) : targets_(std::move(targets)) {
    if (targets_.empty()) throw ParameterError("target scorer needs at least one target image");
  }

  ScoreResult score(const std::vector<Image>& images, const std::vector<int>& view_ids, bool want_grad) override {
    if (view_ids.size() != images.size()) throw ParameterError("target scorer: one view id per image required");
    std::vector<Image> t;
    t.reserve(images.size());
    for (int id : view_ids) {
      if (id < 0 || id >= int(targets_.size()))
        throw ParameterError("target scorer: view id " + std::to_string(id) + " has no target");
      t.push_back(targets_[id]);
    }
    return target_image_scorer(images, t, want_grad);
  }

  std::string id() const override { return "target"; }
  const std::vector<Image>& targets() const { return targets_; }

 private:
  std::vector<Image> targets_;
};

}  // namespace meshforge
