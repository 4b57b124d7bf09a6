#pragma once

// Ray-batch training of a FieldModel with any of the renderers, batched
// image rendering and evaluation, and the paired classic/linerf comparison.

#include "linerf/dataset.hpp"
#include "linerf/diff_render.hpp"
#include "linerf/field.hpp"
#include "linerf/metrics.hpp"
#include "linerf/parallel.hpp"
#include "linerf/render.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace linerf {

struct TrainConfig {
  RendererSpec renderer;
  int iterations = 20000;
  int batch_size = 1024;
  int samples_per_ray = 64;
  double lr_init = 5e-4;
  double lr_decay = 0.1;   // multiplicative factor reached after lr_decay_steps
  int lr_decay_steps = 0;  // 0: the whole run
  std::uint64_t seed = 0;
  int eval_interval = 0;   // 0: evaluate only at the end
  int chunk_size = 256;    // rays per forward/backward chunk
  std::size_t threads = 0;

  void validate() const {
    if (iterations < 0) throw ConfigError("train.iterations must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (samples_per_ray < 1) throw ConfigError("train.samples_per_ray must be >= 1");
    if (!(lr_init > 0)) throw ConfigError("train.lr must be > 0");
    if (!(lr_decay > 0)) throw ConfigError("train.lr_decay must be > 0");
    if (lr_decay_steps < 0) throw ConfigError("train.lr_decay_steps must be >= 0");
    if (eval_interval < 0) throw ConfigError("train.eval_interval must be >= 0");
    if (chunk_size < 1) throw ConfigError("train.chunk_size must be >= 1");
  }

  /// lr_init * lr_decay^(it / decay_steps)
  double learning_rate(int it) const {
    const int steps = lr_decay_steps > 0 ? lr_decay_steps : std::max(iterations, 1);
    return lr_init * std::pow(lr_decay, static_cast<double>(it) / steps);
  }
};

struct LossPoint {
  int iteration = 0;
  double loss = 0;
  double lr = 0;
};

struct ImageScore {
  std::string file;
  double psnr = 0;
  double ssim = 0;
};

struct EvalReport {
  std::string renderer;
  int iteration = 0;
  std::vector<ImageScore> images;
  double mean_psnr = 0;
  double mean_ssim = 0;
};

/// Box used to clip camera rays: dataset bounds when present, else the
/// model's encoder box.
template <class Scalar>
Aabb render_bounds(const FieldModel<Scalar>& model, const DatasetMeta& meta) {
  return meta.bounds ? *meta.bounds : model.cfg.position.box;
}

// ---------------------------------------------------------------------------
// Batched rendering

/// Renders rays in chunks through forward_chunk. Rays without samples render
/// as background.
template <class Scalar>
Matrix<Scalar> render_rays(const FieldModel<Scalar>& model, const std::vector<Ray>& rays,
                           const std::vector<SampleBatch>& samples, const RendererSpec& spec, int chunk,
                           std::size_t threads) {
  const std::size_t n = rays.size();
  Matrix<Scalar> out(3, static_cast<Eigen::Index>(n));
  const std::size_t nchunks = (n + chunk - 1) / chunk;
  parallel_for(nchunks, threads, [&](std::size_t c) {
    const std::size_t b = c * chunk, e = std::min(n, b + chunk);
    const auto f = forward_chunk(model, std::span<const Ray>(rays.data() + b, e - b),
                                 std::span<const SampleBatch>(samples.data() + b, e - b), spec);
    out.middleCols(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b)) = f.rgb;
  });
  return out;
}

/// Full image with midpoint samples; the same rays as render_image but
/// evaluated in batches.
template <class Scalar>
Image render_view(const FieldModel<Scalar>& model, const Camera& cam, const RendererSpec& spec, int samples_per_ray,
                  const Aabb& bounds, std::size_t threads = 0, int chunk = 512) {
  cam.validate();
  threads = resolve_thread_count(threads ? std::optional<std::size_t>(threads) : std::nullopt);
  RenderConfig rc;
  rc.bounds = bounds;
  std::vector<Ray> rays;
  std::vector<SampleBatch> samples;
  rays.reserve(static_cast<std::size_t>(cam.width) * cam.height);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const auto r = pixel_ray(cam, x + 0.5, y + 0.5, rc);
      if (r) {
        rays.push_back(*r);
        samples.push_back(stratified_sample(*r, samples_per_ray, SamplingMode::midpoint));
      } else {
        rays.emplace_back(cam.position(), cam.direction(x + 0.5, y + 0.5), 0.0, 1.0);
        samples.emplace_back();
      }
    }
  const Matrix<Scalar> rgb = render_rays(model, rays, samples, spec, chunk, threads);
  Image img(cam.width, cam.height);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x)
      img.set(x, y, rgb.col(static_cast<Eigen::Index>(y) * cam.width + x).template cast<double>().cwiseMax(0.0).cwiseMin(1.0));
  return img;
}

template <class Scalar>
EvalReport evaluate(const FieldModel<Scalar>& model, const Dataset& data, const RendererSpec& spec,
                    int samples_per_ray, std::size_t threads = 0, std::vector<Image>* renders = nullptr) {
  if (data.empty()) throw DatasetError("evaluate: empty dataset");
  const Aabb bounds = render_bounds(model, data.meta);
  EvalReport rep;
  rep.renderer = spec.str();
  for (const View& v : data.views) {
    Image img = render_view(model, v.camera, spec, samples_per_ray, bounds, threads);
    ImageScore s{v.file, psnr(img, v.image), ssim(img, v.image)};
    rep.images.push_back(s);
    rep.mean_psnr += s.psnr;
    rep.mean_ssim += s.ssim;
    if (renders) renders->push_back(std::move(img));
  }
  rep.mean_psnr /= static_cast<double>(rep.images.size());
  rep.mean_ssim /= static_cast<double>(rep.images.size());
  return rep;
}

// ---------------------------------------------------------------------------
// Training

struct TrainedPixel {
  Ray ray;
  Vec3d target;
  bool hit = true;  // false: ray misses the bounds, only the background applies
};

inline std::vector<TrainedPixel> build_ray_table(const Dataset& data, const Aabb& bounds) {
  std::vector<TrainedPixel> out;
  out.reserve(data.pixel_count());
  RenderConfig rc;
  rc.bounds = bounds;
  for (const View& v : data.views)
    for (int y = 0; y < v.image.height; ++y)
      for (int x = 0; x < v.image.width; ++x) {
        const auto r = pixel_ray(v.camera, x + 0.5, y + 0.5, rc);
        if (r) out.push_back({*r, v.image.rgb(x, y), true});
        else out.push_back({Ray(v.camera.position(), v.camera.direction(x + 0.5, y + 0.5), 0.0, 1.0), v.image.rgb(x, y), false});
      }
  return out;
}

template <class Scalar>
struct TrainHooks {
  /// Called with the iteration count after each eval point (and at the end).
  std::function<void(int, const FieldModel<Scalar>&, const EvalReport*)> on_checkpoint;
  std::function<void(const LossPoint&)> on_step;
};

struct TrainResult {
  std::vector<LossPoint> curve;
  std::vector<EvalReport> evals;
  double seconds = 0;
};

inline std::uint64_t batch_seed(const TrainConfig& cfg, int it) {
  return mix_seed(cfg.seed, static_cast<std::uint64_t>(it) + 1);
}

/// Mean squared error in linear rgb over random ray batches, optimized with
/// Adam. Deterministic for a fixed seed and thread count. `test` is used
/// for evaluation at eval intervals when given.
template <class Scalar>
TrainResult train(FieldModel<Scalar>& model, const Dataset& data, const TrainConfig& cfg,
                  const Dataset* test = nullptr, const TrainHooks<Scalar>& hooks = {}) {
  using S = Scalar;
  cfg.validate();
  if (data.empty()) throw DatasetError("train: empty dataset");
  if (cfg.renderer.kind == RendererKind::split &&
      (cfg.renderer.split < 0 || cfg.renderer.split > model.trunk_depth()))
    throw ConfigError("train: split index out of range for this model");
  const std::size_t threads = resolve_thread_count(cfg.threads ? std::optional<std::size_t>(cfg.threads) : std::nullopt);
  const Aabb bounds = render_bounds(model, data.meta);
  const std::vector<TrainedPixel> table = build_ray_table(data, bounds);
  std::uniform_int_distribution<std::size_t> pick(0, table.size() - 1);

  TrainResult result;
  const auto start = std::chrono::steady_clock::now();
  AdamState<S> adam = make_adam_state<S>(std::span<const std::span<S>>(model.blocks()), AdamHyper{cfg.lr_init});
  const std::size_t workers = std::min<std::size_t>(threads, static_cast<std::size_t>(cfg.batch_size));
  std::vector<FieldGrads<S>> worker_grads(workers, FieldGrads<S>::zeros_like(model));
  std::vector<double> worker_loss(workers);

  std::vector<Ray> rays(static_cast<std::size_t>(cfg.batch_size), Ray(Vec3d::Zero(), Vec3d(0, 0, 1), 0, 1));
  std::vector<SampleBatch> samples(static_cast<std::size_t>(cfg.batch_size));
  Matrix<S> targets(3, cfg.batch_size);

  auto eval_point = [&](int it) {
    std::optional<EvalReport> rep;
    if (test) {
      rep = evaluate(model, *test, cfg.renderer, cfg.samples_per_ray, threads);
      rep->iteration = it;
      result.evals.push_back(*rep);
    }
    if (hooks.on_checkpoint) hooks.on_checkpoint(it, model, rep ? &*rep : nullptr);
  };

  for (int it = 0; it < cfg.iterations; ++it) {
    const std::uint64_t bseed = batch_seed(cfg, it);
    std::mt19937_64 rng(bseed);
    for (int r = 0; r < cfg.batch_size; ++r) {
      const TrainedPixel& px = table[pick(rng)];
      rays[r] = px.ray;
      targets.col(r) = px.target.cast<S>();
      if (px.hit) {
        std::mt19937_64 srng(mix_seed(bseed, static_cast<std::uint64_t>(r)));
        samples[r] = stratified_sample(px.ray, cfg.samples_per_ray, SamplingMode::stratified, &srng);
      } else {
        samples[r] = SampleBatch{};
      }
    }

    const S scale = S(2) / (S(3) * static_cast<S>(cfg.batch_size));
    parallel_ranges(static_cast<std::size_t>(cfg.batch_size), workers, [&](std::size_t w, std::size_t b, std::size_t e) {
      FieldGrads<S>& g = worker_grads[w];
      g.set_zero();
      double loss = 0;
      for (std::size_t c = b; c < e; c += static_cast<std::size_t>(cfg.chunk_size)) {
        const std::size_t ce = std::min(e, c + static_cast<std::size_t>(cfg.chunk_size));
        const auto f = forward_chunk(model, std::span<const Ray>(rays.data() + c, ce - c),
                                     std::span<const SampleBatch>(samples.data() + c, ce - c), cfg.renderer);
        const Matrix<S> diff = f.rgb - targets.middleCols(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(ce - c));
        loss += static_cast<double>(diff.squaredNorm());
        const Matrix<S> grad = diff * scale;
        backward_chunk(model, f, grad, g);
      }
      worker_loss[w] = loss;
    });
    double loss = 0;
    for (std::size_t w = 0; w < workers; ++w) loss += worker_loss[w];
    loss /= 3.0 * cfg.batch_size;
    if (!std::isfinite(loss))
      throw TrainingError("non-finite loss at iteration " + std::to_string(it) + " (batch seed " +
                              std::to_string(bseed) + ")",
                          it, bseed);
    for (std::size_t w = 1; w < workers; ++w) worker_grads[0] += worker_grads[w];

    adam.hyper.lr = cfg.learning_rate(it);
    const auto gb = worker_grads[0].blocks();
    try {
      adam_update<S>(std::span<const std::span<S>>(model.blocks()), std::span<const std::span<const S>>(gb), adam);
    } catch (const TrainingError& e) {
      throw TrainingError(std::string(e.what()) + " at iteration " + std::to_string(it) + " (batch seed " +
                              std::to_string(bseed) + ")",
                          it, bseed);
    }
    const LossPoint lp{it, loss, adam.hyper.lr};
    result.curve.push_back(lp);
    if (hooks.on_step) hooks.on_step(lp);
    if (cfg.eval_interval > 0 && (it + 1) % cfg.eval_interval == 0 && it + 1 < cfg.iterations) eval_point(it + 1);
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  eval_point(cfg.iterations);
  return result;
}

// ---------------------------------------------------------------------------
// Reports

inline std::string format_double(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string loss_curve_csv(const std::vector<LossPoint>& curve) {
  std::string s = "iteration,loss,psnr,lr\n";
  for (const LossPoint& p : curve)
    s += std::to_string(p.iteration) + "," + format_double(p.loss, 9) + "," + format_double(psnr_from_mse(p.loss), 4) +
         "," + format_double(p.lr, 9) + "\n";
  return s;
}

inline std::string eval_report_csv(const EvalReport& r) {
  std::string s = "renderer,iteration,image,psnr,ssim\n";
  for (const ImageScore& i : r.images)
    s += r.renderer + "," + std::to_string(r.iteration) + "," + i.file + "," + format_double(i.psnr, 4) + "," +
         format_double(i.ssim, 6) + "\n";
  s += r.renderer + "," + std::to_string(r.iteration) + ",mean," + format_double(r.mean_psnr, 4) + "," +
       format_double(r.mean_ssim, 6) + "\n";
  return s;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw InputError("cannot write " + p.string());
  os << text;
  if (!os) throw InputError("failed writing " + p.string());
}

// ---------------------------------------------------------------------------
// Paired comparison

struct RunSpec {
  FieldConfig model;
  TrainConfig train;
};

struct CompareReport {
  EvalReport classic;
  EvalReport linerf;
  std::vector<Image> heatmaps;  // per test view
  double delta_psnr() const { return linerf.mean_psnr - classic.mean_psnr; }
};

/// Green where the linerf render is closer to ground truth than the classic
/// render, magenta where it is further; intensity ~ 5x the mean abs error gap.
inline Image difference_heatmap(const Image& gt, const Image& classic, const Image& linerf) {
  if (!gt.same_size(classic) || !gt.same_size(linerf)) throw InputError("difference_heatmap: size mismatch");
  Image out(gt.width, gt.height);
  for (int y = 0; y < gt.height; ++y)
    for (int x = 0; x < gt.width; ++x) {
      const double ec = (classic.rgb(x, y) - gt.rgb(x, y)).cwiseAbs().mean();
      const double el = (linerf.rgb(x, y) - gt.rgb(x, y)).cwiseAbs().mean();
      const double d = std::clamp(5.0 * (ec - el), -1.0, 1.0);
      out.set(x, y, d >= 0 ? Vec3d(1 - d, 1, 1 - d) : Vec3d(1, 1 + d, 1));
    }
  return out;
}

/// Fails unless the two runs differ only in the renderer.
inline void check_compare_parity(const RunSpec& a, const RunSpec& b) {
  const TrainConfig &x = a.train, &y = b.train;
  if (x.seed != y.seed || x.iterations != y.iterations || x.batch_size != y.batch_size ||
      x.samples_per_ray != y.samples_per_ray || x.lr_init != y.lr_init || x.lr_decay != y.lr_decay ||
      x.lr_decay_steps != y.lr_decay_steps)
    throw ConfigError("compare: runs must share seed and training budget");
  const FieldModel<double> ma(a.model), mb(b.model);
  if (!ma.same_architecture(mb) || ma.parameter_count() != mb.parameter_count() || to_json(a.model) != to_json(b.model))
    throw ConfigError("compare: runs must share the FieldModel architecture");
}

/// Trains classic and linerf from the same initialization and budget and
/// evaluates both on `test`.
template <class Scalar>
CompareReport compare(const Dataset& train_set, const Dataset& test, const RunSpec& classic_run,
                      const RunSpec& linerf_run, FieldModel<Scalar>* classic_out = nullptr,
                      FieldModel<Scalar>* linerf_out = nullptr) {
  if (classic_run.train.renderer.kind != RendererKind::classic)
    throw ConfigError("compare: first run must use the classic renderer");
  if (linerf_run.train.renderer.kind == RendererKind::classic)
    throw ConfigError("compare: second run must use a feature-integrating renderer");
  check_compare_parity(classic_run, linerf_run);
  CompareReport rep;
  std::vector<Image> rc, rl;
  for (int pass = 0; pass < 2; ++pass) {
    const RunSpec& run = pass == 0 ? classic_run : linerf_run;
    FieldModel<Scalar> m = FieldModel<Scalar>::create(run.model, run.train.seed);
    train(m, train_set, run.train);
    EvalReport r = evaluate(m, test, run.train.renderer, run.train.samples_per_ray, run.train.threads,
                            pass == 0 ? &rc : &rl);
    r.iteration = run.train.iterations;
    (pass == 0 ? rep.classic : rep.linerf) = std::move(r);
    if (pass == 0 && classic_out) *classic_out = std::move(m);
    if (pass == 1 && linerf_out) *linerf_out = std::move(m);
  }
  for (std::size_t i = 0; i < test.views.size(); ++i)
    rep.heatmaps.push_back(difference_heatmap(test.views[i].image, rc[i], rl[i]));
  return rep;
}

/// Per-view table with Classic / Ours columns and a mean row.
inline std::string compare_table(const CompareReport& r) {
  std::string s = "image,psnr_classic,psnr_ours,ssim_classic,ssim_ours\n";
  for (std::size_t i = 0; i < r.classic.images.size(); ++i)
    s += r.classic.images[i].file + "," + format_double(r.classic.images[i].psnr, 4) + "," +
         format_double(r.linerf.images[i].psnr, 4) + "," + format_double(r.classic.images[i].ssim, 6) + "," +
         format_double(r.linerf.images[i].ssim, 6) + "\n";
  s += "mean," + format_double(r.classic.mean_psnr, 4) + "," + format_double(r.linerf.mean_psnr, 4) + "," +
       format_double(r.classic.mean_ssim, 6) + "," + format_double(r.linerf.mean_ssim, 6) + "\n";
  return s;
}

}  // namespace linerf
