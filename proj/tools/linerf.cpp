// linerf command line: dataset generation, training, rendering,
// evaluation, verification and paired comparison.

#include "linerf/linerf.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace linerf;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitVerify = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::optional<std::size_t> thread_flag(int threads) {
  if (threads < 0) throw UsageError("--threads must be >= 1");
  if (threads == 0) return std::nullopt;
  return static_cast<std::size_t>(threads);
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw InputError("cannot create " + p.string() + ": " + ec.message());
}

nlohmann::json checkpoint_meta(const RunConfig& rc, const TrainConfig& tc) {
  return {{"renderer", tc.renderer.str()},
          {"precision", rc.precision == Precision::f32 ? "float" : "double"},
          {"train", to_json(tc)}};
}

std::string renderer_from_meta(const std::string& ckpt, const std::string& requested) {
  if (!requested.empty()) return requested;
  const auto meta = load_model_meta(ckpt);
  return meta.value("renderer", std::string("linerf"));
}

// --- gen-data ---------------------------------------------------------------

struct GenArgs {
  std::string scene = "glossy";
  std::string out;
  int views = 30;
  int test_views = 10;
  int res = 64;
  std::uint64_t seed = 0;
  double radius = 2.0;
  int threads = 0;
};

int run_gen(const GenArgs& a) {
  if (a.views < 1) throw UsageError("--views must be >= 1");
  if (a.test_views < 1) throw UsageError("--test-views must be >= 1");
  if (a.res < 8) throw UsageError("--res must be >= 8");
  const Scene scene = scene_by_name(a.scene);
  GenConfig g;
  g.n_train = a.views;
  g.n_test = a.test_views;
  g.resolution = a.res;
  g.seed = a.seed;
  g.radius = a.radius;
  if (auto t = thread_flag(a.threads)) g.threads = *t;
  const auto ds = gen_dataset(scene, g, a.out);
  std::cout << "wrote " << ds.train.views.size() << " train and " << ds.test.views.size() << " test views to "
            << a.out << "\n";
  return 0;
}

// --- train --------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int threads = 0;
};

template <class S>
int train_typed(RunConfig rc, const DatasetSplits& data) {
  if (!rc.box_explicit && data.train.meta.bounds) rc.model.position.box = *data.train.meta.bounds;
  TrainConfig tc = rc.train;
  if (rc.threads) tc.threads = *rc.threads;
  FieldModel<S> model = FieldModel<S>::create(rc.model, tc.seed);
  ensure_dir(rc.out);
  const nlohmann::json meta = checkpoint_meta(rc, tc);
  TrainHooks<S> hooks;
  hooks.on_checkpoint = [&](int it, const FieldModel<S>& m, const EvalReport* rep) {
    save_model((rc.out / "checkpoint.lnrf").string(), m, meta);
    if (rep) std::printf("iteration %d: test PSNR %.3f dB, SSIM %.4f\n", it, rep->mean_psnr, rep->mean_ssim);
  };
  const int every = std::max(1, tc.iterations / 20);
  hooks.on_step = [&](const LossPoint& p) {
    if (p.iteration % every == 0) std::printf("iteration %d: loss %.6f lr %.3g\n", p.iteration, p.loss, p.lr);
  };
  const TrainResult res = train(model, data.train, tc, &data.test, hooks);
  save_model((rc.out / "model.lnrf").string(), model, meta);
  write_text(rc.out / "loss.csv", loss_curve_csv(res.curve));
  std::string evals;
  for (const auto& e : res.evals) evals += eval_report_csv(e);
  write_text(rc.out / "eval.csv", evals);
  const EvalReport& last = res.evals.back();
  std::printf("final test PSNR %.4f dB, SSIM %.4f (%s, %d iterations)\n", last.mean_psnr, last.mean_ssim,
              last.renderer.c_str(), tc.iterations);
  return 0;
}

int run_train(const TrainArgs& a) {
  RunConfig rc = load_run_config(a.config);
  if (!a.out.empty()) rc.out = a.out;
  if (a.seed) rc.train.seed = *a.seed;
  if (auto t = thread_flag(a.threads)) rc.threads = t;
  const DatasetSplits data = load_dataset(rc.data, rc.downscale, rc.threads.value_or(0));
  ensure_dir(rc.out);
  nlohmann::json resolved{{"model", to_json(rc.model)}, {"train", to_json(rc.train)},
                          {"data", rc.data.string()}, {"downscale", rc.downscale}};
  write_text(rc.out / "resolved_config.json", resolved.dump(2) + "\n");
  return rc.precision == Precision::f32 ? train_typed<float>(rc, data) : train_typed<double>(rc, data);
}

// --- render -------------------------------------------------------------------

struct RenderArgs {
  std::string ckpt;
  std::string renderer;
  int pose = 0;
  std::string out;
  std::string data;
  int res = 64;
  int samples = 64;
  int threads = 0;
};

int run_render(const RenderArgs& a) {
  if (a.pose < 0) throw UsageError("--pose must be >= 0");
  if (a.samples < 1) throw UsageError("--samples must be >= 1");
  const FieldModel<double> model = load_model<double>(a.ckpt);
  const RendererSpec spec = RendererSpec::parse(renderer_from_meta(a.ckpt, a.renderer));
  Camera cam;
  Aabb bounds = model.cfg.position.box;
  if (!a.data.empty()) {
    const Dataset test = load_split(a.data, "test");
    if (a.pose >= static_cast<int>(test.views.size()))
      throw UsageError("--pose " + std::to_string(a.pose) + " out of range (" + std::to_string(test.views.size()) +
                       " test views)");
    cam = test.views[static_cast<std::size_t>(a.pose)].camera;
    bounds = render_bounds(model, test.meta);
  } else {
    GenConfig g;
    g.resolution = a.res;
    if (a.pose >= g.n_test) throw UsageError("--pose must be < " + std::to_string(g.n_test) + " without --data");
    cam = generate_cameras(g, false)[static_cast<std::size_t>(a.pose)];
  }
  const Image img = render_view(model, cam, spec, a.samples, bounds, thread_flag(a.threads).value_or(0));
  const fs::path out(a.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  write_image(a.out, img);
  std::cout << "wrote " << a.out << " (" << spec.str() << ")\n";
  return 0;
}

// --- eval ---------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string renderer;
  std::string out;
  int samples = 64;
  int threads = 0;
};

int run_eval(const EvalArgs& a) {
  const FieldModel<double> model = load_model<double>(a.ckpt);
  const RendererSpec spec = RendererSpec::parse(renderer_from_meta(a.ckpt, a.renderer));
  const std::size_t threads = thread_flag(a.threads).value_or(0);
  const Dataset test = load_split(a.data, "test", 1, threads);
  std::vector<Image> renders;
  const EvalReport rep = evaluate(model, test, spec, a.samples, threads, a.out.empty() ? nullptr : &renders);
  const std::string csv = eval_report_csv(rep);
  if (!a.out.empty()) {
    ensure_dir(fs::path(a.out) / "renders");
    write_text(fs::path(a.out) / "eval.csv", csv);
    for (std::size_t i = 0; i < renders.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "r_%03zu.ppm", i);
      write_image((fs::path(a.out) / "renders" / name).string(), renders[i]);
    }
  }
  std::cout << csv;
  return 0;
}

// --- verify -------------------------------------------------------------------

struct VerifyArgs {
  std::string ckpt;
  std::string data;
  std::string mode = "bounds";
  std::string out;
  int rays = 256;
  int samples = 64;
  std::uint64_t seed = 0;
  std::string scene;  // analytic scene for surface anchors; default from the dataset
};

int run_verify(const VerifyArgs& a) {
  if (a.rays < 1) throw UsageError("--rays must be >= 1");
  const FieldModel<double> model = load_model<double>(a.ckpt);
  const Dataset test = load_split(a.data, "test");
  ensure_dir(a.out);
  if (a.mode == "equivalence") {
    const EquivalenceSummary s = verify_equivalence(model, test, a.rays, a.samples, a.seed);
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "rays: %d\ndirac max |classic - linerf|: %.3e\nsplit:%d vs linerf max diff: %.3e\nsplit bitwise "
                  "identical: %s\n",
                  s.rays, s.dirac_max_diff, model.trunk_depth(), s.split_max_diff, s.split_bitwise ? "yes" : "no");
    write_text(fs::path(a.out) / "equivalence.txt", buf);
    std::cout << buf;
    return s.ok() ? 0 : kExitVerify;
  }
  if (a.mode != "bounds") throw UsageError("--mode must be equivalence or bounds");
  std::optional<Scene> scene;
  const std::string name = a.scene.empty() ? test.meta.scene : a.scene;
  if (name == "matte" || name == "glossy") scene = scene_by_name(name);
  else if (!a.scene.empty()) throw UsageError("--scene must be matte or glossy");
  const BoundSweep s = sweep_bounds(model, test, scene ? &*scene : nullptr, a.rays, a.samples, a.seed);
  write_text(fs::path(a.out) / "bounds.csv", bound_sweep_csv(s));
  const std::string summary = bound_sweep_summary(s);
  write_text(fs::path(a.out) / "bounds_summary.txt", summary);
  std::cout << summary;
  return (s.jensen_violations == 0 && s.bound_violations == 0) ? 0 : kExitVerify;
}

// --- compare ------------------------------------------------------------------

struct CompareArgs {
  std::string config;
  std::string out;
  int threads = 0;
};

template <class S>
int compare_typed(RunConfig rc, const DatasetSplits& data) {
  if (!rc.box_explicit && data.train.meta.bounds) rc.model.position.box = *data.train.meta.bounds;
  RunSpec classic{rc.model, rc.train}, ours{rc.model, rc.train};
  classic.train.renderer = RendererSpec::parse("classic");
  ours.train.renderer = RendererSpec::parse(rc.compare_renderer);
  if (rc.threads) classic.train.threads = ours.train.threads = *rc.threads;
  FieldModel<S> mc, ml;
  const CompareReport rep = compare<S>(data.train, data.test, classic, ours, &mc, &ml);
  ensure_dir(rc.out / "heatmaps");
  save_model((rc.out / "classic.lnrf").string(), mc, checkpoint_meta(rc, classic.train));
  save_model((rc.out / "ours.lnrf").string(), ml, checkpoint_meta(rc, ours.train));
  const std::string table = compare_table(rep);
  write_text(rc.out / "compare.csv", table);
  for (std::size_t i = 0; i < rep.heatmaps.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "diff_%03zu.ppm", i);
    write_image((rc.out / "heatmaps" / name).string(), rep.heatmaps[i]);
  }
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-10s %10s %10s\n%-10s %10.4f %10.4f\n%-10s %10.4f %10.4f\ndelta PSNR (ours - classic): %+.4f dB\n",
                "", "Classic", "Ours", "PSNR", rep.classic.mean_psnr, rep.linerf.mean_psnr, "SSIM",
                rep.classic.mean_ssim, rep.linerf.mean_ssim, rep.delta_psnr());
  write_text(rc.out / "compare.txt", buf);
  std::cout << buf;
  return 0;
}

int run_compare(const CompareArgs& a) {
  RunConfig rc = load_run_config(a.config);
  if (!a.out.empty()) rc.out = a.out;
  if (auto t = thread_flag(a.threads)) rc.threads = t;
  const DatasetSplits data = load_dataset(rc.data, rc.downscale, rc.threads.value_or(0));
  return rc.precision == Precision::f32 ? compare_typed<float>(rc, data) : compare_typed<double>(rc, data);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"linerf: volume rendering with integrated positional features"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (default: LINERF_THREADS or all cores)")
      ->check(CLI::NonNegativeNumber);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "render an analytic scene into a transforms-style dataset");
  g->add_option("--scene", gen.scene, "matte | glossy")->check(CLI::IsMember({"matte", "glossy"}));
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--views", gen.views, "training views");
  g->add_option("--test-views", gen.test_views, "test views on the fixed ring");
  g->add_option("--res", gen.res, "image resolution");
  g->add_option("--seed", gen.seed, "camera placement seed");
  g->add_option("--radius", gen.radius, "camera distance from the origin");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model from a JSON manifest");
  t->add_option("--config", tr.config, "manifest")->required()->check(CLI::ExistingFile);
  t->add_option("--out", tr.out, "override the manifest output directory");
  t->add_option("--seed", tr.seed, "override the training seed");

  RenderArgs rn;
  auto* r = app.add_subcommand("render", "render one view from a checkpoint");
  r->add_option("--ckpt", rn.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  r->add_option("--renderer", rn.renderer, "classic | linerf | split:<k> (default: as trained)");
  r->add_option("--pose", rn.pose, "test camera index");
  r->add_option("--out", rn.out, "output PPM")->required();
  r->add_option("--data", rn.data, "dataset whose test cameras are used (default: the generator's ring)");
  r->add_option("--res", rn.res, "resolution when no dataset is given");
  r->add_option("--samples", rn.samples, "samples per ray");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "PSNR/SSIM of a checkpoint on a test split");
  e->add_option("--ckpt", ev.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  e->add_option("--data", ev.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--renderer", ev.renderer, "classic | linerf | split:<k> (default: as trained)");
  e->add_option("--out", ev.out, "directory for eval.csv and renders");
  e->add_option("--samples", ev.samples, "samples per ray");

  VerifyArgs vf;
  auto* v = app.add_subcommand("verify", "estimator equivalence or second-order bound checks");
  v->add_option("--ckpt", vf.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  v->add_option("--data", vf.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  v->add_option("--mode", vf.mode, "equivalence | bounds")->check(CLI::IsMember({"equivalence", "bounds"}));
  v->add_option("--out", vf.out, "output directory")->required();
  v->add_option("--rays", vf.rays, "test rays");
  v->add_option("--samples", vf.samples, "samples per ray");
  v->add_option("--seed", vf.seed, "ray selection seed");
  v->add_option("--scene", vf.scene, "analytic scene for surface anchors (default: from the dataset)");

  CompareArgs cp;
  auto* c = app.add_subcommand("compare", "train classic and linerf with one budget and compare them");
  c->add_option("--config", cp.config, "manifest")->required()->check(CLI::ExistingFile);
  c->add_option("--out", cp.out, "override the manifest output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    gen.threads = tr.threads = rn.threads = ev.threads = cp.threads = threads;
    if (*g) return run_gen(gen);
    if (*t) return run_train(tr);
    if (*r) return run_render(rn);
    if (*e) return run_eval(ev);
    if (*v) return run_verify(vf);
    if (*c) return run_compare(cp);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& err) {
    std::cerr << "configuration error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const IngestionError& err) {
    std::cerr << "ingestion error: " << err.what() << "\n";
    return kExitFailure;
  } catch (const TrainingError& err) {
    std::cerr << "training error: " << err.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
