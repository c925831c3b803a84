#pragma once

// Adam over {V0, texture, normal map[, background]}, primitive selection,
// the optimisation loop, and binary checkpoints.

#include <json.hpp>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cameras.hpp"
#include "errors.hpp"
#include "loss.hpp"
#include "mesh.hpp"
#include "mesh_io.hpp"
#include "objective.hpp"
#include "raster.hpp"
#include "subdiv.hpp"
#include "texel_map.hpp"

namespace meshforge {

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  std::vector<double> m, v;
};

// One bias-corrected Adam update; `step` is 1-based.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& mom, double lr, long long step,
                      const std::string& group, const AdamConfig& cfg = {}) {
  if (params.size() != grads.size())
    throw ParameterError("adam_step: group '" + group + "' has " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
  if (step < 1) throw ParameterError("adam_step: step must be >= 1");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i]))
      throw NumericError("non-finite gradient in parameter group '" + group + "' at index " + std::to_string(i));
  if (mom.m.empty()) {
    mom.m.assign(params.size(), 0.0);
    mom.v.assign(params.size(), 0.0);
  }
  if (mom.m.size() != params.size()) throw ParameterError("adam_step: moment shape mismatch in group '" + group + "'");
  const double c1 = 1 - std::pow(cfg.beta1, double(step));
  const double c2 = 1 - std::pow(cfg.beta2, double(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    mom.m[i] = cfg.beta1 * mom.m[i] + (1 - cfg.beta1) * grads[i];
    mom.v[i] = cfg.beta2 * mom.v[i] + (1 - cfg.beta2) * grads[i] * grads[i];
    const double mhat = mom.m[i] / c1;
    const double vhat = mom.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

inline std::span<double> as_span(Positions& p) { return {p.data(), std::size_t(p.size())}; }
inline std::span<const double> as_span(const Positions& p) { return {p.data(), std::size_t(p.size())}; }
inline std::span<double> as_span(Vec3& v) { return {v.data(), 3}; }
inline std::span<const double> as_span(const Vec3& v) { return {v.data(), 3}; }

struct LearningRates {
  double vertices = 1e-2;
  double texture = 1e-2;
  double normal_map = 5e-3;
  double background = 1e-2;
};

enum ParamGroup { group_vertices = 0, group_texture, group_normal_map, group_background, group_count };

inline const char* group_name(int g) {
  static const char* names[] = {"vertices", "texture", "normal_map", "background"};
  return names[g];
}

struct OptimState {
  long long step = 0;
  std::array<AdamMoments, group_count> moments;
  LambdaSchedule schedule;
  std::uint64_t seed = 0;
  std::mt19937_64 rng;
  double best_loss = std::numeric_limits<double>::infinity();
  long long best_step = 0;
};

// ---------------------------------------------------------------------------
// initialisation

// Texture logits ~ N(0, 0.5^2); normal xy logits ~ N(0, 0.05^2) around the
// flat normal (about 2 degrees of tilt on average).
inline Parameters initialize_parameters(const ControlMesh& mesh, int texture_size, std::mt19937_64& rng) {
  if (texture_size < 16 || texture_size > 1024 || !std::has_single_bit(unsigned(texture_size)))
    throw ParameterError("texture size must be a power of two in [16, 1024], got " + std::to_string(texture_size));
  Parameters p;
  p.V0 = mesh.vertices;
  p.texture = random_color_map(texture_size, texture_size, 0.5, rng);
  p.normal_map = random_normal_map(texture_size, texture_size, 0.05, rng);
  return p;
}

// ---------------------------------------------------------------------------
// primitive selection

struct SelectionResult {
  std::size_t index = 0;
  std::vector<double> mean_losses;
};

// Every candidate is rendered with the same mid-gray texture and flat normal
// map from the same views; the lowest mean loss wins, ties go to the earlier
// candidate.
inline SelectionResult select_primitive(const std::vector<ControlMesh>& candidates, Scorer& scorer,
                                        const std::vector<RenderView>& views, const RenderConfig& cfg, int depth) {
  if (candidates.empty()) throw ParameterError("select_primitive: no candidates");
  if (views.empty()) throw ParameterError("select_primitive: no views");
  const auto material = Material::make(constant_color_map(4, 4, Vec3(0.5, 0.5, 0.5)), flat_normal_map(4, 4));
  SelectionResult res;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const SubdivisionOperator op = build_operator(candidates[c], depth);
    std::vector<Image> images;
    std::vector<int> ids;
    for (const RenderView& v : views) {
      images.push_back(render(op.refined, material, v.pose, v.background, cfg).image);
      ids.push_back(v.view_id);
    }
    const double loss = scorer.score(images, ids, false).loss;
    res.mean_losses.push_back(loss);
    if (loss < res.mean_losses[res.index]) res.index = c;
  }
  return res;
}

inline SelectionResult select_primitive(const std::vector<ControlMesh>& candidates, Scorer& scorer, int n_views,
                                        ViewSource& source, std::mt19937_64& rng, const RenderConfig& cfg, int depth) {
  if (n_views < 1) throw ParameterError("select_primitive: n_views must be >= 1");
  return select_primitive(candidates, scorer, source.sample(n_views, rng), cfg, depth);
}

// ---------------------------------------------------------------------------
// checkpoints: "MFCKPT01" magic, u32 version, then little-endian fields

namespace detail {

class BinaryWriter {
 public:
  void u32(std::uint32_t x) { raw(x, 4); }
  void u64(std::uint64_t x) { raw(x, 8); }
  void i64(long long x) { raw(std::uint64_t(x), 8); }
  void f64(double x) { raw(std::bit_cast<std::uint64_t>(x), 8); }
  void str(const std::string& s) {
    u64(s.size());
    buf_ += s;
  }
  void f64s(std::span<const double> xs) {
    u64(xs.size());
    for (double x : xs) f64(x);
  }
  const std::string& bytes() const { return buf_; }
  void magic(const char* m) { buf_.append(m, 8); }

 private:
  void raw(std::uint64_t x, int n) {
    for (int i = 0; i < n; ++i) buf_ += char(x >> (8 * i) & 255);
  }
  std::string buf_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::string data) : buf_(std::move(data)) {}
  std::uint32_t u32() { return std::uint32_t(raw(4)); }
  std::uint64_t u64() { return raw(8); }
  long long i64() { return (long long)raw(8); }
  double f64() { return std::bit_cast<double>(raw(8)); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> f64s() {
    const std::uint64_t n = u64();
    need(n * 8);
    std::vector<double> xs(n);
    for (auto& x : xs) x = f64();
    return xs;
  }
  std::string magic() {
    need(8);
    std::string m = buf_.substr(pos_, 8);
    pos_ += 8;
    return m;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > buf_.size() - pos_) throw IoError("checkpoint is truncated");
  }
  std::uint64_t raw(int n) {
    need(std::uint64_t(n));
    std::uint64_t x = 0;
    for (int i = 0; i < n; ++i) x |= std::uint64_t(std::uint8_t(buf_[pos_ + i])) << (8 * i);
    pos_ += std::size_t(n);
    return x;
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

inline void write_map(BinaryWriter& w, const TexelMap& m) {
  w.u32(std::uint32_t(m.width));
  w.u32(std::uint32_t(m.height));
  w.u32(m.kind == TexelKind::color ? 0 : 1);
  w.f64s(m.data);
}

inline TexelMap read_map(BinaryReader& r) {
  const int w = int(r.u32()), h = int(r.u32());
  const TexelKind kind = r.u32() == 0 ? TexelKind::color : TexelKind::normal;
  TexelMap m(w, h, kind);
  m.data = r.f64s();
  if (m.data.size() != m.texel_count() * 3) throw IoError("checkpoint texel map has the wrong size");
  return m;
}

inline void write_atomically(const std::filesystem::path& path, const std::string& bytes) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp + "'");
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw IoError("failed writing '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

constexpr std::uint32_t checkpoint_version = 1;

struct Checkpoint {
  ControlMesh control;  // topology and UVs; positions live in params.V0
  Parameters params;
  OptimState state;
};

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  detail::BinaryWriter w;
  w.magic("MFCKPT01");
  w.u32(checkpoint_version);
  const ControlMesh& m = ck.control;
  w.u64(m.faces.size());
  for (const Face& f : m.faces)
    for (int c : f) w.u32(std::uint32_t(c));
  std::vector<double> uv;
  for (const Vec2& t : m.uvs) uv.insert(uv.end(), {t.x(), t.y()});
  w.f64s(uv);
  w.u64(m.uv_faces.size());
  for (const Face& f : m.uv_faces)
    for (int c : f) w.u32(std::uint32_t(c));
  w.u32(m.wrap_u ? 1 : 0);

  w.u64(std::uint64_t(ck.params.V0.rows()));
  w.f64s(as_span(ck.params.V0));
  detail::write_map(w, ck.params.texture);
  detail::write_map(w, ck.params.normal_map);
  w.f64s(as_span(ck.params.background));

  const OptimState& s = ck.state;
  w.i64(s.step);
  for (const AdamMoments& mom : s.moments) {
    w.f64s(mom.m);
    w.f64s(mom.v);
  }
  w.f64(s.schedule.lambda0);
  w.f64(s.schedule.lambda_min);
  w.f64(s.schedule.k);
  w.f64(s.schedule.lambda);
  w.i64(s.schedule.t);
  w.u64(s.seed);
  std::ostringstream rng;
  rng << s.rng;
  w.str(rng.str());
  w.f64(s.best_loss);
  w.i64(s.best_step);
  return w.bytes();
}

inline Checkpoint deserialize_checkpoint(std::string bytes) {
  detail::BinaryReader r(std::move(bytes));
  if (r.magic() != "MFCKPT01") throw IoError("not a meshforge checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != checkpoint_version) throw IoError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ControlMesh& m = ck.control;
  m.faces.resize(r.u64());
  for (Face& f : m.faces)
    for (int& c : f) c = int(r.u32());
  const auto uv = r.f64s();
  for (std::size_t i = 0; i + 1 < uv.size(); i += 2) m.uvs.emplace_back(uv[i], uv[i + 1]);
  m.uv_faces.resize(r.u64());
  for (Face& f : m.uv_faces)
    for (int& c : f) c = int(r.u32());
  m.wrap_u = r.u32() != 0;

  const auto rows = Eigen::Index(r.u64());
  const auto v = r.f64s();
  if (v.size() != std::size_t(rows) * 3) throw IoError("checkpoint vertex array has the wrong size");
  ck.params.V0 = Eigen::Map<const Positions>(v.data(), rows, 3);
  m.vertices = ck.params.V0;
  ck.params.texture = detail::read_map(r);
  ck.params.normal_map = detail::read_map(r);
  const auto bg = r.f64s();
  if (bg.size() != 3) throw IoError("checkpoint background has the wrong size");
  ck.params.background = Vec3(bg[0], bg[1], bg[2]);

  OptimState& s = ck.state;
  s.step = r.i64();
  for (AdamMoments& mom : s.moments) {
    mom.m = r.f64s();
    mom.v = r.f64s();
  }
  s.schedule.lambda0 = r.f64();
  s.schedule.lambda_min = r.f64();
  s.schedule.k = r.f64();
  s.schedule.lambda = r.f64();
  s.schedule.t = r.i64();
  s.seed = r.u64();
  std::istringstream rng(r.str());
  rng >> s.rng;
  if (!rng) throw IoError("checkpoint RNG state is corrupt");
  s.best_loss = r.f64();
  s.best_step = r.i64();
  if (!r.done()) throw IoError("trailing bytes in checkpoint");
  return ck;
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  detail::write_atomically(path, serialize_checkpoint(ck));
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

// ---------------------------------------------------------------------------
// run

struct RunConfig {
  std::string prompt;
  int iterations = 2000;
  int views_per_iter = 4;
  int depth = 2;
  int primitive_level = 2;
  std::optional<PrimitiveKind> primitive;  // unset: auto-select
  int selection_views = 8;
  int texture_size = 512;
  double lambda0 = 30.0;
  LearningRates lr;
  double lr_final_fraction = 0.1;
  ViewConfig views;
  RenderConfig render;
  bool learned_background = false;
  std::uint64_t seed = 0;
  int checkpoint_every = 100;
  std::filesystem::path out_dir = "out";

  void validate() const {
    if (iterations < 0) throw ParameterError("iterations must be >= 0");
    if (views_per_iter < 1) throw ParameterError("views per iteration must be >= 1");
    if (depth < 0 || depth > 4) throw ParameterError("depth must be in [0, 4]");
    if (primitive_level < 0 || primitive_level > 5) throw ParameterError("primitive level must be in [0, 5]");
    if (selection_views < 1) throw ParameterError("selection views must be >= 1");
    if (texture_size < 16 || texture_size > 1024 || !std::has_single_bit(unsigned(texture_size)))
      throw ParameterError("texture size must be a power of two in [16, 1024], got " + std::to_string(texture_size));
    if (!(lambda0 >= 0)) throw ParameterError("lambda0 must be >= 0");
    if (!(lr_final_fraction > 0 && lr_final_fraction <= 1)) throw ParameterError("lr final fraction must be in (0, 1]");
    for (double x : {lr.vertices, lr.texture, lr.normal_map, lr.background})
      if (!(x >= 0)) throw ParameterError("learning rates must be >= 0");
    if (checkpoint_every < 0) throw ParameterError("checkpoint interval must be >= 0");
    render.validate();
  }

  nlohmann::json to_json() const {
    return {{"prompt", prompt},
            {"iterations", iterations},
            {"views_per_iter", views_per_iter},
            {"depth", depth},
            {"primitive_level", primitive_level},
            {"primitive", primitive ? std::string(to_string(*primitive)) : std::string("auto")},
            {"selection_views", selection_views},
            {"texture_size", texture_size},
            {"lambda0", lambda0},
            {"lr", {{"vertices", lr.vertices}, {"texture", lr.texture}, {"normal_map", lr.normal_map}, {"background", lr.background}}},
            {"lr_final_fraction", lr_final_fraction},
            {"resolution", render.resolution},
            {"sigma", render.sigma},
            {"bg_aug", views.background_augment},
            {"fov_aug", views.fov_augment},
            {"offset_aug", views.offset_augment},
            {"learned_bg", learned_background},
            {"seed", seed},
            {"checkpoint_every", checkpoint_every}};
  }
};

struct LogRow {
  long long iter;
  double total, similarity, laplacian, lambda;
};

inline std::string format_log_row(const LogRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g", r.iter, r.total, r.similarity, r.laplacian, r.lambda);
  return buf;
}

constexpr const char* loss_log_header = "iter,loss_total,loss_sim,loss_lap,lambda_t";

struct RunResult {
  Checkpoint final;
  SubdivisionOperator subdiv;
  std::vector<LogRow> log;
  std::optional<SelectionResult> selection;
  PrimitiveKind primitive = PrimitiveKind::sphere;
};

struct RunHooks {
  std::function<void(const LogRow&)> on_iteration;
};

inline double decayed_lr(double lr, double final_fraction, long long step, int iterations) {
  if (iterations <= 1) return lr;
  return lr * std::pow(final_fraction, double(step - 1) / double(iterations - 1));
}

namespace detail {

// Keeps the header and rows up to `step` of an existing log.
inline std::string truncated_log(const std::filesystem::path& path, long long step) {
  std::string out = std::string(loss_log_header) + "\n";
  std::ifstream in(path);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      first = false;
      continue;
    }
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) <= step) out += line + "\n";
  }
  return out;
}

}  // namespace detail

// Optimises from `start` (or from `resume`), writing loss.csv, checkpoints
// and the final assets into cfg.out_dir.
inline RunResult run_from(const RunConfig& cfg, Scorer& scorer, ViewSource& views, Checkpoint start,
                          const RunHooks& hooks = {}) {
  cfg.validate();
  std::filesystem::create_directories(cfg.out_dir);
  RunResult result;
  result.subdiv = build_operator(start.control, cfg.depth);
  const LaplacianOperator lap = LaplacianOperator::build(result.subdiv.refined);
  ObjectiveContext ctx{&result.subdiv, &lap, cfg.render, cfg.learned_background};

  Checkpoint& ck = start;
  OptimState& st = ck.state;
  Parameters& p = ck.params;
  const auto log_path = cfg.out_dir / "loss.csv";
  {
    std::ofstream log(log_path, std::ios::trunc);
    log << (st.step > 0 ? detail::truncated_log(log_path.string() + ".prev", st.step) : std::string(loss_log_header) + "\n");
  }
  {
    std::ofstream meta(cfg.out_dir / "run_config.json");
    meta << cfg.to_json().dump(2) << "\n";
  }
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("cannot write '" + log_path.string() + "'");

  for (long long t = st.step + 1; t <= cfg.iterations; ++t) {
    LambdaSchedule next = lambda_step(st.schedule);
    const auto batch = views.sample(cfg.views_per_iter, st.rng);
    const ObjectiveResult obj = total_objective(ctx, p, batch, scorer, next.lambda);
    if (!std::isfinite(obj.total))
      throw NumericError("non-finite loss at iteration " + std::to_string(t) + "; last checkpoint kept");
    adam_step(as_span(p.V0), as_span(obj.grad_V0), st.moments[group_vertices],
              decayed_lr(cfg.lr.vertices, cfg.lr_final_fraction, t, cfg.iterations), t, group_name(group_vertices));
    adam_step(p.texture.data, obj.grad_texture.data, st.moments[group_texture],
              decayed_lr(cfg.lr.texture, cfg.lr_final_fraction, t, cfg.iterations), t, group_name(group_texture));
    adam_step(p.normal_map.data, obj.grad_normal_map.data, st.moments[group_normal_map],
              decayed_lr(cfg.lr.normal_map, cfg.lr_final_fraction, t, cfg.iterations), t, group_name(group_normal_map));
    if (cfg.learned_background)
      adam_step(as_span(p.background), as_span(obj.grad_background), st.moments[group_background],
                decayed_lr(cfg.lr.background, cfg.lr_final_fraction, t, cfg.iterations), t, group_name(group_background));
    st.schedule = next;
    st.step = t;
    if (obj.total < st.best_loss) {
      st.best_loss = obj.total;
      st.best_step = t;
    }
    const LogRow row{t, obj.total, obj.similarity, obj.laplacian, next.lambda};
    result.log.push_back(row);
    log << format_log_row(row) << "\n" << std::flush;
    if (hooks.on_iteration) hooks.on_iteration(row);
    if (cfg.checkpoint_every > 0 && t % cfg.checkpoint_every == 0) {
      ck.control.vertices = p.V0;
      write_checkpoint(cfg.out_dir / "checkpoint.bin", ck);
    }
  }
  ck.control.vertices = p.V0;
  write_checkpoint(cfg.out_dir / "checkpoint.bin", ck);
  ControlMesh refined = result.subdiv.refined;
  refined.vertices = apply(result.subdiv, p.V0);
  save_assets(refined, refined.vertices, p.texture, p.normal_map, cfg.out_dir);
  result.final = std::move(ck);
  return result;
}

// Fresh run: picks the primitive (unless fixed), initialises and optimises.
inline RunResult run(const RunConfig& cfg, Scorer& scorer, ViewSource& views, const RunHooks& hooks = {}) {
  cfg.validate();
  Checkpoint ck;
  ck.state.seed = cfg.seed;
  ck.state.rng.seed(cfg.seed);
  ck.state.schedule = LambdaSchedule::make(cfg.lambda0);

  std::optional<SelectionResult> selection;
  PrimitiveKind kind;
  if (cfg.primitive) {
    kind = *cfg.primitive;
  } else {
    std::vector<ControlMesh> candidates;
    for (PrimitiveKind k : all_primitives()) candidates.push_back(make_primitive(k, cfg.primitive_level));
    selection = select_primitive(candidates, scorer, cfg.selection_views, views, ck.state.rng, cfg.render, cfg.depth);
    kind = all_primitives()[selection->index];
  }
  ck.control = make_primitive(kind, cfg.primitive_level);
  ck.params = initialize_parameters(ck.control, cfg.texture_size, ck.state.rng);
  std::filesystem::remove(cfg.out_dir / "loss.csv.prev");
  RunResult r = run_from(cfg, scorer, views, std::move(ck), hooks);
  r.selection = selection;
  r.primitive = kind;
  return r;
}

// Continues a run from a checkpoint; rows of an existing loss.csv past the
// checkpoint step are dropped.
inline RunResult resume(const RunConfig& cfg, Scorer& scorer, ViewSource& views, const std::filesystem::path& checkpoint,
                        const RunHooks& hooks = {}) {
  Checkpoint ck = read_checkpoint(checkpoint);
  const auto log_path = cfg.out_dir / "loss.csv";
  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  std::filesystem::remove(log_path.string() + ".prev", ec);
  if (std::filesystem::exists(log_path)) std::filesystem::copy_file(log_path, log_path.string() + ".prev");
  RunResult r = run_from(cfg, scorer, views, std::move(ck), hooks);
  std::filesystem::remove(log_path.string() + ".prev", ec);
  return r;
}

// Mean squared error between two images' rgb.
inline double image_mse(const Image& a, const Image& b) {
  if (a.rgb.size() != b.rgb.size()) throw ParameterError("image_mse: size mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) s += (a.rgb[i] - b.rgb[i]) * (a.rgb[i] - b.rgb[i]);
  return s / double(a.rgb.size());
}

}  // namespace meshforge
