#pragma once

// `meshforge` command line: generate, render, gradcheck, select-primitive.
// Exit codes: 0 ok, 1 runtime failure, 2 usage or configuration error.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "mesh_io.hpp"
#include "optimize.hpp"
#include "remote_scorer.hpp"

namespace meshforge {

constexpr int exit_ok = 0;
constexpr int exit_runtime = 1;
constexpr int exit_usage = 2;

namespace detail {

// Thrown for problems the user must fix in flags or config.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct ScorerSetup {
  std::unique_ptr<Scorer> scorer;
  std::unique_ptr<ViewSource> views;
  int resolution = 0;
  std::optional<TargetSet> targets;
};

// "target:<dir>" or "remote:<url>"; an empty spec falls back to
// MESHFORGE_SCORER_URL.
inline ScorerSetup make_scorer(std::string spec, const std::string& prompt, int resolution, const ViewConfig& views) {
  if (spec.empty()) {
    if (const char* env = std::getenv("MESHFORGE_SCORER_URL"); env && *env) spec = std::string("remote:") + env;
  }
  if (spec.empty()) throw UsageError("no scorer selected: pass --scorer target:<dir> or remote:<url>, or set MESHFORGE_SCORER_URL");
  ScorerSetup s;
  if (spec.rfind("target:", 0) == 0) {
    TargetSet set;
    try {
      set = load_target_set(spec.substr(7));
    } catch (const Error& e) {
      throw UsageError(std::string("cannot load target set: ") + e.what());
    }
    if (resolution != 0 && resolution != set.resolution())
      throw UsageError("--res " + std::to_string(resolution) + " does not match the " + std::to_string(set.resolution()) +
                       "px target images");
    s.resolution = set.resolution();
    s.scorer = std::make_unique<TargetImageScorer>(set.images);
    s.views = std::make_unique<FixedViews>(set.render_views());
    s.targets = std::move(set);
    return s;
  }
  if (spec.rfind("remote:", 0) == 0) {
    if (prompt.empty()) throw UsageError("a remote scorer needs --prompt");
    s.resolution = resolution != 0 ? resolution : 224;
    try {
      s.scorer = std::make_unique<RemoteScorer>(spec.substr(7), prompt);
    } catch (const ParameterError& e) {
      throw UsageError(e.what());
    }
    s.views = std::make_unique<RandomViews>(views, s.resolution);
    return s;
  }
  throw UsageError("scorer must be target:<dir> or remote:<url>, got '" + spec + "'");
}

inline std::optional<PrimitiveKind> parse_primitive_option(const std::string& s) {
  if (s == "auto") return std::nullopt;
  try {
    return parse_primitive(s);
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }
}

}  // namespace detail

inline int run_cli(int argc, char** argv) {
  CLI::App app{"meshforge: text- or image-guided textured mesh optimisation"};
  app.set_config("--config", "", "read options from an ini/toml file (flags win)");
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  // generate / select-primitive share most options
  struct GenerateOptions {
    std::string scorer, prompt, out = "out", primitive = "auto", resume;
    int iters = 2000, views = 4, res = 0, depth = 2, level = 2, select_views = 8, texture_size = 512;
    int checkpoint_every = 100;
    double lambda0 = 30, lr_vertices = 1e-2, lr_texture = 1e-2, lr_normal = 5e-3, lr_background = 1e-2, lr_final = 0.1;
    double sigma = RenderConfig{}.sigma;
    bool no_bg_aug = false, no_fov_aug = false, no_offset_aug = false, learned_bg = false, verbose = false;
    std::uint64_t seed = 0;
  } g;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--scorer", g.scorer, "target:<dir> or remote:<url>");
    sub->add_option("--prompt", g.prompt, "text prompt (remote scorer)");
    sub->add_option("--res", g.res, "render resolution (default 224; target sets use their own size)");
    sub->add_option("--depth", g.depth, "subdivision depth")->check(CLI::Range(0, 4));
    sub->add_option("--level", g.level, "primitive tessellation level")->check(CLI::Range(0, 5));
    sub->add_option("--select-views", g.select_views, "views used for primitive selection")->check(CLI::PositiveNumber);
    sub->add_option("--sigma", g.sigma, "soft silhouette width (NDC units)")->check(CLI::PositiveNumber);
    sub->add_option("--seed", g.seed, "random seed");
    sub->add_flag("--no-bg-aug", g.no_bg_aug, "disable random backgrounds");
    sub->add_flag("--no-fov-aug", g.no_fov_aug, "disable field-of-view jitter");
    sub->add_flag("--no-offset-aug", g.no_offset_aug, "disable look-at offsets");
  };

  CLI::App* gen = app.add_subcommand("generate", "optimise a textured mesh");
  add_common(gen);
  gen->add_option("--out", g.out, "output directory");
  gen->add_option("--iters", g.iters, "iterations")->check(CLI::NonNegativeNumber);
  gen->add_option("--views", g.views, "views per iteration (K)")->check(CLI::PositiveNumber);
  gen->add_option("--primitive", g.primitive, "auto, sphere, cuboid_horizontal or cuboid_vertical");
  gen->add_option("--texture-size", g.texture_size, "texture and normal map size");
  gen->add_option("--lambda0", g.lambda0, "initial Laplacian weight");
  gen->add_option("--lr-vertices", g.lr_vertices);
  gen->add_option("--lr-texture", g.lr_texture);
  gen->add_option("--lr-normal", g.lr_normal);
  gen->add_option("--lr-background", g.lr_background);
  gen->add_option("--lr-final", g.lr_final, "final learning rate as a fraction of the initial one");
  gen->add_option("--checkpoint-every", g.checkpoint_every, "checkpoint interval (0: only at the end)");
  gen->add_flag("--learned-bg", g.learned_bg, "optimise a solid background colour");
  gen->add_option("--resume", g.resume, "continue from a checkpoint file");
  gen->add_flag("-v,--verbose", g.verbose, "print every iteration");

  CLI::App* sel = app.add_subcommand("select-primitive", "score the primitives and print a table");
  add_common(sel);

  struct RenderOptions {
    std::string model, out;
    double azimuth = 0, elevation = 15, fov = 45, distance = 5, sigma = RenderConfig{}.sigma;
    int res = 256;
    std::vector<double> background{1, 1, 1};
    bool alpha_only = false;
  } r;
  CLI::App* ren = app.add_subcommand("render", "render saved assets to PNG");
  ren->add_option("--model", r.model, "asset directory (model.obj, texture.png, normal.png)")->required();
  ren->add_option("--out", r.out, "output PNG")->required();
  ren->add_option("--azimuth", r.azimuth, "degrees");
  ren->add_option("--elevation", r.elevation, "degrees in [0, 100]");
  ren->add_option("--fov", r.fov, "vertical field of view, degrees")->check(CLI::Range(1.0, 179.0));
  ren->add_option("--distance", r.distance)->check(CLI::PositiveNumber);
  ren->add_option("--res", r.res)->check(CLI::PositiveNumber);
  ren->add_option("--sigma", r.sigma)->check(CLI::PositiveNumber);
  ren->add_option("--background", r.background, "r g b")->expected(3);
  ren->add_flag("--alpha-only", r.alpha_only, "write the coverage as a grayscale PNG");

  struct GradcheckCliOptions {
    std::string preset = "small", fault;
    std::uint64_t seed = 0;
  } gc;
  CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference checks of all gradients");
  grad->add_option("preset", gc.preset, "scene size preset (small)");
  grad->add_option("--seed", gc.seed);
  grad->add_option("--inject-fault", gc.fault, "flip the sign of one component's gradient (testing)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_usage;
  }

  auto make_run_config = [&]() {
    RunConfig cfg;
    cfg.prompt = g.prompt;
    cfg.iterations = g.iters;
    cfg.views_per_iter = g.views;
    cfg.depth = g.depth;
    cfg.primitive_level = g.level;
    cfg.primitive = detail::parse_primitive_option(g.primitive);
    cfg.selection_views = g.select_views;
    cfg.texture_size = g.texture_size;
    cfg.lambda0 = g.lambda0;
    cfg.lr = {g.lr_vertices, g.lr_texture, g.lr_normal, g.lr_background};
    cfg.lr_final_fraction = g.lr_final;
    cfg.views.background_augment = !g.no_bg_aug;
    cfg.views.fov_augment = !g.no_fov_aug;
    cfg.views.offset_augment = !g.no_offset_aug;
    cfg.render.sigma = g.sigma;
    cfg.learned_background = g.learned_bg;
    cfg.seed = g.seed;
    cfg.checkpoint_every = g.checkpoint_every;
    cfg.out_dir = g.out;
    return cfg;
  };

  if (*gen || *sel) {
    RunConfig cfg;
    detail::ScorerSetup setup;
    try {
      cfg = make_run_config();
      setup = detail::make_scorer(g.scorer, g.prompt, g.res, cfg.views);
      cfg.render.resolution = setup.resolution;
      cfg.validate();
      if (*gen) {
        std::filesystem::create_directories(cfg.out_dir);
        std::ofstream snap(cfg.out_dir / "config.ini");
        if (!snap) throw detail::UsageError("cannot write to output directory '" + cfg.out_dir.string() + "'");
        std::istringstream all(app.config_to_str(true, false));
        for (std::string line; std::getline(all, line);)
          if (line.rfind("generate.", 0) == 0) snap << line << "\n";
      }
    } catch (const detail::UsageError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return exit_usage;
    } catch (const ParameterError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return exit_usage;
    } catch (const std::filesystem::filesystem_error& e) {
      std::cerr << "error: " << e.what() << "\n";
      return exit_usage;
    }

    try {
      if (*sel) {
        std::mt19937_64 rng(cfg.seed);
        std::vector<ControlMesh> candidates;
        for (PrimitiveKind k : all_primitives()) candidates.push_back(make_primitive(k, cfg.primitive_level));
        const auto res = select_primitive(candidates, *setup.scorer, cfg.selection_views, *setup.views, rng, cfg.render,
                                          cfg.depth);
        std::printf("%-20s %s\n", "primitive", "mean_loss");
        for (std::size_t i = 0; i < candidates.size(); ++i)
          std::printf("%-20s %.6f%s\n", std::string(to_string(all_primitives()[i])).c_str(), res.mean_losses[i],
                      i == res.index ? "  *" : "");
        return exit_ok;
      }
      RunHooks hooks;
      const int every = g.verbose ? 1 : std::max(1, cfg.iterations / 20);
      hooks.on_iteration = [&](const LogRow& row) {
        if (row.iter % every == 0 || row.iter == cfg.iterations)
          std::printf("iter %5lld  loss %.6f  sim %.6f  lap %.3e  lambda %.4f\n", row.iter, row.total, row.similarity,
                      row.laplacian, row.lambda);
      };
      RunResult result = g.resume.empty() ? run(cfg, *setup.scorer, *setup.views, hooks)
                                          : resume(cfg, *setup.scorer, *setup.views, g.resume, hooks);
      if (result.selection) {
        std::printf("primitive: %s (mean losses:", std::string(to_string(result.primitive)).c_str());
        for (double l : result.selection->mean_losses) std::printf(" %.6f", l);
        std::printf(")\n");
      }
      if (setup.targets) {
        const Positions V = apply(result.subdiv, result.final.params.V0);
        const auto material = Material::make(result.final.params.texture, result.final.params.normal_map);
        const auto views = setup.targets->render_views();
        double mse = 0;
        for (std::size_t i = 0; i < views.size(); ++i)
          mse += image_mse(render(V, result.subdiv.refined, material, views[i].pose, views[i].background, cfg.render).image,
                           setup.targets->images[i]);
        std::printf("target mse: %.6g\n", mse / double(views.size()));
      }
      std::printf("wrote %s\n", cfg.out_dir.string().c_str());
      return exit_ok;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return exit_runtime;
    }
  }

  if (*ren) {
    if (r.elevation < 0 || r.elevation > 100) {
      std::cerr << "error: --elevation must be in [0, 100]\n";
      return exit_usage;
    }
    Assets assets;
    try {
      assets = load_assets(r.model);
    } catch (const Error& e) {
      std::cerr << "error: " << e.what() << "\n";
      return exit_usage;
    }
    try {
      ViewSample v;
      v.azimuth = r.azimuth;
      v.elevation = r.elevation;
      v.fov = r.fov;
      v.distance = r.distance;
      RenderConfig cfg;
      cfg.resolution = r.res;
      cfg.sigma = r.sigma;
      const Vec3 bg(r.background[0], r.background[1], r.background[2]);
      const auto out = render(assets.mesh, Material::make(assets.texture, assets.normal_map), camera_pose(v),
                              Image::solid(r.res, r.res, bg), cfg);
      if (r.alpha_only)
        write_png(r.out, alpha_to_gray8(out.image));
      else
        save_image_png(r.out, out.image);
      return exit_ok;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return exit_runtime;
    }
  }

  if (*grad) {
    if (gc.preset != "small") {
      std::cerr << "error: unknown gradcheck preset '" << gc.preset << "' (available: small)\n";
      return exit_usage;
    }
    const auto comps = gradcheck_components();
    if (!gc.fault.empty() && std::find(comps.begin(), comps.end(), gc.fault) == comps.end()) {
      std::cerr << "error: unknown component '" << gc.fault << "' for --inject-fault\n";
      return exit_usage;
    }
    try {
      std::vector<std::string> failed;
      for (const GradcheckResult& res : run_gradchecks({gc.seed, gc.fault})) {
        std::printf("%-12s rel_err %.3e  threshold %.0e  probes %3d  %s\n", res.component.c_str(), res.error, res.threshold,
                    res.probes, res.pass() ? "ok" : "FAIL");
        if (!res.pass()) failed.push_back(res.component);
      }
      if (failed.empty()) return exit_ok;
      std::string list;
      for (const auto& f : failed) list += (list.empty() ? "" : ", ") + f;
      std::fprintf(stderr, "gradient check failed: %s\n", list.c_str());
      return exit_runtime;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return exit_runtime;
    }
  }
  return exit_usage;
}

}  // namespace meshforge
