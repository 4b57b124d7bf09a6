#include "linerf/scenes.hpp"
#include "linerf/train.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace linerf;
using namespace linerf::test;

namespace {

Image constant_image(int w, int h, double v) { return Image(w, h, Vec3d::Constant(v)); }

Dataset constant_dataset(const Vec3d& color, int views = 4, int res = 12) {
  GenConfig g;
  g.n_train = views;
  g.resolution = res;
  Dataset ds;
  ds.split = "train";
  ds.meta.bounds = Aabb{Vec3d(-0.6, -0.4, -0.6), Vec3d(0.6, 0.4, 0.6)};
  int i = 0;
  for (const Camera& c : generate_cameras(g, true)) ds.views.push_back({c, Image(res, res, color), "v" + std::to_string(i++)});
  return ds;
}

FieldConfig sh_background(FieldConfig c, int degree = 1) {
  c.background.kind = BackgroundKind::spherical_harmonics;
  c.background.sh_degree = degree;
  return c;
}

TrainConfig quick(const std::string& renderer, int iterations) {
  TrainConfig t;
  t.renderer = RendererSpec::parse(renderer);
  t.iterations = iterations;
  t.batch_size = 64;
  t.samples_per_ray = 16;
  t.lr_init = 1e-2;
  t.threads = 1;
  t.seed = 5;
  return t;
}

std::vector<double> flatten(FieldModel<double>& m) {
  std::vector<double> out;
  for (const auto& b : m.blocks()) out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace

TEST(Psnr, Examples) {
  const Image a = constant_image(4, 4, 0.3);
  EXPECT_EQ(psnr(a, a), 99.0);
  EXPECT_NEAR(psnr(a, constant_image(4, 4, 0.4)), 20.0, 1e-9);
  EXPECT_NEAR(psnr(constant_image(4, 4, 0.0), constant_image(4, 4, 0.5)), 10 * std::log10(4.0), 1e-12);
  EXPECT_NEAR(psnr(constant_image(4, 4, 0.0), constant_image(4, 4, 0.5)), 6.0206, 1e-4);
  EXPECT_THROW(psnr(a, constant_image(4, 5, 0.3)), InputError);
}

// Constant at the cap up to MSE = 10^-9.9, strictly decreasing beyond.
TEST(Psnr, MonotoneInMse) {
  EXPECT_EQ(psnr_from_mse(0.0), 99.0);
  EXPECT_EQ(psnr_from_mse(1e-12), 99.0);
  EXPECT_EQ(psnr_from_mse(1e-10), 99.0);
  double prev = psnr_from_mse(1.26e-10);
  EXPECT_LT(prev, 99.0);
  for (double m : {2e-10, 1e-6, 1e-3, 0.1, 1.0, 2.0}) {
    const double p = psnr_from_mse(m);
    EXPECT_LT(p, prev) << m;
    prev = p;
  }
}

TEST(Ssim, IdenticalIsOne) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  Image a(20, 16);
  for (double& v : a.pixels) v = u(rng);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, CheckerboardAgainstNegativeIsNegative) {
  Image a(24, 24), b(24, 24);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x) {
      const double v = (x + y) % 2 ? 1.0 : 0.0;
      a.set(x, y, Vec3d::Constant(v));
      b.set(x, y, Vec3d::Constant(1 - v));
    }
  const double s = ssim(a, b);
  EXPECT_LT(s, 0.0);
  EXPECT_GE(s, -1.0);
}

TEST(Ssim, ConstantImagesMatchLuminanceTerm) {
  const double m1 = 0.4, m2 = 0.5, c1 = 0.01 * 0.01;
  const double expected = (2 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
  EXPECT_NEAR(ssim(constant_image(16, 16, m1), constant_image(16, 16, m2)), expected, 1e-12);
}

TEST(Ssim, TooSmallImageRejected) {
  EXPECT_THROW(ssim(constant_image(10, 20, 0.1), constant_image(10, 20, 0.1)), InputError);
  EXPECT_NO_THROW(ssim(constant_image(11, 11, 0.1), constant_image(11, 11, 0.1)));
}

TEST(Train, ConstantDatasetCollapses) {
  const Dataset ds = constant_dataset(Vec3d(0.3, 0.5, 0.7));
  for (const char* r : {"classic", "linerf"}) {
    // Degree-0 background: a learned constant that can match the target.
    auto model = FieldModel<double>::create(sh_background(small_grid(), 0), 1);
    TrainConfig cfg = quick(r, 500);
    cfg.lr_init = 5e-2;
    const TrainResult res = train(model, ds, cfg);
    ASSERT_EQ(res.curve.size(), 500u);
    EXPECT_LT(res.curve.back().loss, 1e-4) << r;
    for (const auto& p : res.curve) EXPECT_GE(p.loss, 0.0);
  }
}

TEST(Train, ZeroIterationsLeavesModelUnchanged) {
  const Dataset ds = constant_dataset(Vec3d(0.2, 0.2, 0.2));
  auto model = FieldModel<double>::create(small_mlp(), 4);
  const auto before = flatten(model);
  const TrainResult res = train(model, ds, quick("linerf", 0));
  EXPECT_TRUE(res.curve.empty());
  EXPECT_EQ(flatten(model), before);
}

TEST(Train, SameSeedSameCurve) {
  const Dataset ds = constant_dataset(Vec3d(0.6, 0.1, 0.3));
  std::vector<std::vector<double>> losses, params;
  for (int rep = 0; rep < 2; ++rep) {
    auto model = FieldModel<double>::create(small_grid(), 9);
    const auto res = train(model, ds, quick("linerf", 20));
    std::vector<double> l;
    for (const auto& p : res.curve) l.push_back(p.loss);
    losses.push_back(l);
    params.push_back(flatten(model));
  }
  EXPECT_EQ(losses[0], losses[1]);
  EXPECT_EQ(params[0], params[1]);
}

TEST(Train, NonFiniteLossReportsIterationAndSeed) {
  const Dataset ds = constant_dataset(Vec3d(0.5, 0.5, 0.5));
  auto model = FieldModel<double>::create(small_mlp(), 2);
  model.color_head.layers.back().bias(0) = std::numeric_limits<double>::quiet_NaN();
  const TrainConfig cfg = quick("classic", 3);
  try {
    train(model, ds, cfg);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.index(), 0);
    EXPECT_EQ(e.batch_seed(), batch_seed(cfg, 0));
  }
}

TEST(Train, EmptyDatasetRejected) {
  auto model = FieldModel<double>::create(small_mlp(), 2);
  EXPECT_THROW(train(model, Dataset{}, quick("classic", 1)), DatasetError);
}

TEST(Train, SplitBeyondDepthRejected) {
  const Dataset ds = constant_dataset(Vec3d(0.5, 0.5, 0.5));
  auto model = FieldModel<double>::create(small_mlp(), 2);
  EXPECT_THROW(train(model, ds, quick("split:5", 1)), ConfigError);
}

TEST(Train, LearningRateSchedule) {
  TrainConfig c;
  c.iterations = 100;
  c.lr_init = 1e-3;
  EXPECT_DOUBLE_EQ(c.learning_rate(0), 1e-3);
  EXPECT_NEAR(c.learning_rate(50), 1e-3 * std::sqrt(0.1), 1e-15);
  c.lr_decay_steps = 10;
  EXPECT_NEAR(c.learning_rate(20), 1e-5, 1e-18);
}

// One Adam step at a tiny learning rate on a single ray lowers that ray's loss.
TEST(Train, SingleStepDecreasesRayLoss) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0, 1);
  for (const char* r : {"classic", "linerf"}) {
    const RendererSpec spec = RendererSpec::parse(r);
    for (int k = 0; k < 10; ++k) {
      auto model = FieldModel<double>::create(sh_background(small_grid()), 100 + k);
      const Ray ray = random_ray(rng);
      const std::vector<Ray> rays{ray};
      const std::vector<SampleBatch> samples{stratified_sample(ray, 16, SamplingMode::midpoint)};
      const Vec3d target(u(rng), u(rng), u(rng));
      auto loss = [&](const FieldModel<double>& m) {
        const auto f = forward_chunk(m, std::span<const Ray>(rays), std::span<const SampleBatch>(samples), spec);
        return (f.rgb.col(0) - target).squaredNorm();
      };
      const double before = loss(model);
      const auto f = forward_chunk(model, std::span<const Ray>(rays), std::span<const SampleBatch>(samples), spec);
      const Matrix<double> grad = 2.0 * (f.rgb.col(0) - target);
      auto g = FieldGrads<double>::zeros_like(model);
      backward_chunk(model, f, grad, g);
      AdamState<double> adam = make_adam_state<double>(std::span<const std::span<double>>(model.blocks()), AdamHyper{1e-5});
      const auto gb = g.blocks();
      adam_update<double>(std::span<const std::span<double>>(model.blocks()), std::span<const std::span<const double>>(gb), adam);
      EXPECT_LT(loss(model), before) << r << " ray " << k;
    }
  }
}

TEST(Compare, ParityEnforced) {
  RunSpec a{small_grid(), quick("classic", 2)}, b{small_grid(), quick("linerf", 2)};
  EXPECT_NO_THROW(check_compare_parity(a, b));
  RunSpec c = b;
  c.train.iterations = 3;
  EXPECT_THROW(check_compare_parity(a, c), ConfigError);
  RunSpec d = b;
  d.model.trunk_width = 7;
  EXPECT_THROW(check_compare_parity(a, d), ConfigError);
  RunSpec e = b;
  e.train.seed = 6;
  EXPECT_THROW(check_compare_parity(a, e), ConfigError);
  const Dataset ds = constant_dataset(Vec3d(0.5, 0.5, 0.5));
  EXPECT_THROW(compare<double>(ds, ds, a, d), ConfigError);
}

TEST(Compare, ReportIsReproducible) {
  Dataset train_set = constant_dataset(Vec3d(0.4, 0.6, 0.2), 3, 12);
  Dataset test = constant_dataset(Vec3d(0.4, 0.6, 0.2), 2, 12);
  test.split = "test";
  const RunSpec a{small_grid(), quick("classic", 5)}, b{small_grid(), quick("linerf", 5)};
  const CompareReport r1 = compare<double>(train_set, test, a, b);
  const CompareReport r2 = compare<double>(train_set, test, a, b);
  EXPECT_EQ(compare_table(r1), compare_table(r2));
  ASSERT_EQ(r1.heatmaps.size(), 2u);
  EXPECT_EQ(encode_ppm(r1.heatmaps[0]), encode_ppm(r2.heatmaps[0]));
  EXPECT_DOUBLE_EQ(r1.delta_psnr(), r1.linerf.mean_psnr - r1.classic.mean_psnr);
}
