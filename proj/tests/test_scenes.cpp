#include "linerf/dataset.hpp"
#include "linerf/render.hpp"
#include "linerf/scenes.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace linerf;
using namespace linerf::test;

namespace {

// Second, independently written tracer for the matte scene: explicit camera
// basis, quadratic sphere test, plane patch test, checker parity on the
// plane's (u, n x u) axes, Lambert with ambient, 2x2 supersampling.
Vec3d scanline_pixel(const Vec3d& eye, double focal, int w, int h, int px, int py) {
  const Vec3d back = eye.normalized();
  const Vec3d right = Vec3d(0, 1, 0).cross(back).normalized();
  const Vec3d up = back.cross(right);
  const Vec3d lights[2] = {Vec3d(0.4, 1.0, 0.3).normalized(), Vec3d(-0.6, 0.5, -0.4).normalized()};
  const double power[2] = {0.8, 0.3};
  Vec3d acc = Vec3d::Zero();
  for (int sy = 0; sy < 2; ++sy)
    for (int sx = 0; sx < 2; ++sx) {
      const double u = (px + 0.25 + 0.5 * sx - 0.5 * w) / focal;
      const double v = -(py + 0.25 + 0.5 * sy - 0.5 * h) / focal;
      const Vec3d d = (u * right + v * up - back).normalized();
      double best = 1e300;
      Vec3d n, albedo;
      const double b = eye.dot(d);
      const double disc = b * b - (eye.squaredNorm() - 0.09);
      if (disc >= 0) {
        const double t = -b - std::sqrt(disc);
        if (t > 0) {
          best = t;
          n = (eye + t * d).normalized();
          albedo = Vec3d(0.8, 0.3, 0.25);
        }
      }
      if (d.y() != 0) {
        const double t = (-0.3 - eye.y()) / d.y();
        const Vec3d p = eye + t * d;
        if (t > 0 && t < best && std::abs(p.x()) <= 0.5 && std::abs(p.z()) <= 0.5) {
          best = t;
          n = Vec3d(0, 1, 0);
          const long a = static_cast<long>(std::floor(p.x() / 0.25));
          const long c = static_cast<long>(std::floor(-p.z() / 0.25));
          albedo = ((a + c) % 2 == 0) ? Vec3d(0.75, 0.73, 0.68) : Vec3d(0.5, 0.52, 0.56);
        }
      }
      if (best == 1e300) {
        acc += Vec3d::Ones();
        continue;
      }
      if (n.dot(d) > 0) n = -n;
      double k = 0.1;
      for (int i = 0; i < 2; ++i) k += power[i] * std::max(0.0, n.dot(lights[i]));
      acc += (albedo * k).cwiseMin(1.0);
    }
  return acc / 4;
}

GenConfig small_gen(std::uint64_t seed) {
  GenConfig g;
  g.n_train = 3;
  g.n_test = 2;
  g.resolution = 16;
  g.seed = seed;
  g.threads = 1;
  return g;
}

// Rays from the generator's test ring through random pixels that hit the
// scene, clipped to the scene bounds.
std::vector<Ray> surface_rays(const Scene& scene, int count, std::uint64_t seed) {
  GenConfig g;
  g.n_test = 8;
  const auto cams = generate_cameras(g, false);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 64);
  std::vector<Ray> out;
  while (static_cast<int>(out.size()) < count) {
    const Camera& c = cams[rng() % cams.size()];
    const Vec3d o = c.position();
    const Vec3d d = c.direction(u(rng), u(rng));
    const auto hit = intersect(scene, o, d);
    const auto box = scene.bounds.intersect(o, d);
    if (!hit || !box) continue;
    out.emplace_back(o, d, box->first, box->second);
  }
  return out;
}

}  // namespace

TEST(Scenes, MissGivesBackground) {
  const Scene s = glossy_scene();
  EXPECT_EQ(gt_radiance(s, Ray(Vec3d(0, 2, 0), Vec3d(0, 1, 0), 0, 10)), s.background);
}

TEST(Scenes, LambertClosedForm) {
  Scene s;
  Sphere ball;
  ball.radius = 0.5;
  ball.material.diffuse = Vec3d(0.3, 0.6, 0.9);
  s.spheres.push_back(ball);
  s.lights = {{Vec3d(0, 0, 1), 1.0}};
  s.ambient = 0;
  const Vec3d c = gt_radiance(s, Ray(Vec3d(0, 0, 3), Vec3d(0, 0, -1), 0, 10));
  EXPECT_NEAR((c - ball.material.diffuse).cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(Scenes, GlossySphereIsViewDependent) {
  const Scene s = glossy_scene();
  const Vec3d p = Vec3d(0.1, 0.2, 0.15).normalized() * 0.3;
  const Vec3d e1 = p + 1.5 * Vec3d(0.2, 0.9, 0.4).normalized();
  const Vec3d e2 = p + 1.5 * Vec3d(0.8, 0.3, 0.5).normalized();
  const Vec3d c1 = gt_radiance(s, Ray(e1, (p - e1).normalized(), 0, 10));
  const Vec3d c2 = gt_radiance(s, Ray(e2, (p - e2).normalized(), 0, 10));
  EXPECT_GT((c1 - c2).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Scenes, ViewDependenceWitness) {
  const Scene s = glossy_scene();
  std::mt19937_64 rng(1);
  double best = 0;
  for (int k = 0; k < 20; ++k) {
    const Vec3d n = Vec3d(random_unit(rng).x(), 1.0, random_unit(rng).z()).normalized();
    const Vec3d p = 0.3 * n;
    Vec3d lo = Vec3d::Constant(1e9), hi = Vec3d::Constant(-1e9);
    for (int j = 0; j < 200; ++j) {
      Vec3d v = random_unit(rng);
      if (v.dot(n) < 0) v = -v;
      const Vec3d c = gt_radiance(s, Ray(p + 2.0 * v, -v, 0, 10));
      lo = lo.cwiseMin(c);
      hi = hi.cwiseMax(c);
    }
    best = std::max(best, (hi - lo).maxCoeff());
  }
  EXPECT_GE(best, 0.2);
}

TEST(Scenes, ShellDensity) {
  const Scene s = matte_scene();
  const AnalyticField f(s, 0.01);
  EXPECT_EQ(f.density(Vec3d(0.5, 0.35, 0.5)), 0.0);
  EXPECT_EQ(f.density(Vec3d(0, 0.295, 0)), f.amplitude() / 0.01);
  EXPECT_EQ(f.density(Vec3d(0, 0.302, 0)), 0.0);
  EXPECT_EQ(f.density(Vec3d(0.2, -0.305, 0.3)), f.amplitude() / 0.01);
  EXPECT_EQ(f.density(Vec3d(0.2, -0.295, 0.3)), 0.0);
  EXPECT_THROW(AnalyticField(s, 0.0), InputError);
}

TEST(Scenes, PerpendicularShellIsOpaque) {
  const Scene s = matte_scene();
  const AnalyticField f(s, 0.01);
  const Ray r(Vec3d(0, 1, 0), Vec3d(0, -1, 0), 0.5, 0.9);
  const auto b = stratified_sample(r, 1024, SamplingMode::midpoint);
  const auto w = compute_weights<double>(f.densities(sample_positions<double>(r, b), Matrix<double>()), b.delta);
  EXPECT_GE(w.fg_mass, 1 - 1e-6);
}

TEST(Scenes, OpticalDepthIndependentOfShellWidth) {
  const Scene s = matte_scene();
  const Ray r(Vec3d(0, 1, 0), Vec3d(0, -1, 0), 0.6, 0.8);
  auto depth = [&](double eps) {
    const AnalyticField f(s, eps);
    const auto b = stratified_sample(r, 200000, SamplingMode::midpoint);
    const auto sig = f.densities(sample_positions<double>(r, b), Matrix<double>());
    double tau = 0;
    for (Eigen::Index i = 0; i < sig.size(); ++i) tau += sig[i] * b.delta[static_cast<std::size_t>(i)];
    return tau;
  };
  EXPECT_NEAR(depth(0.01), 16.0, 0.01);
  EXPECT_NEAR(depth(0.005), depth(0.01), 0.02);
}

TEST(Scenes, OracleConvergence) {
  const Scene s = glossy_scene();
  const AnalyticField f(s, 0.01);
  for (const Ray& r : surface_rays(s, 100, 3)) {
    const auto b = stratified_sample(r, 256, SamplingMode::midpoint);
    const Vec3d gt = gt_radiance(s, r);
    EXPECT_LT((render_classic(f, r, b) - gt).cwiseAbs().maxCoeff(), 2e-2);
    EXPECT_LT((render_linerf(f, r, b) - gt).cwiseAbs().maxCoeff(), 2e-2);
  }
}

TEST(Scenes, RayEmbeddingNearIntersection) {
  const Scene s = matte_scene();
  const double eps = 0.01;
  const AnalyticField f(s, eps);
  for (const Ray& r : surface_rays(s, 100, 4)) {
    const auto b = stratified_sample(r, 256, SamplingMode::midpoint);
    const auto hit = intersect(s, r.origin, r.direction);
    EXPECT_LE((ray_embedding(f, r, b).first - hit->point).norm(), 5 * eps);
  }
}

TEST(Scenes, EpipolarConsistency) {
  const Scene s = glossy_scene();
  const double eps = 0.01;
  const AnalyticField f(s, eps);
  std::mt19937_64 rng(5);
  for (int k = 0; k < 50; ++k) {
    Vec3d n = random_unit(rng);
    if (n.y() < 0.2) n.y() = 0.2 + std::abs(n.y());
    n.normalize();
    const Vec3d p = 0.3 * n;
    Vec3d embeds[2];
    for (int j = 0; j < 2; ++j) {
      Vec3d v = random_unit(rng);
      while (v.dot(n) < 0.3 || v.y() < 0.1) v = random_unit(rng);
      const Vec3d o = p + 1.2 * v;
      const Ray r(o, -v, 0.5, 1.9);
      embeds[j] = ray_embedding(f, r, stratified_sample(r, 512, SamplingMode::midpoint)).first;
    }
    EXPECT_LE((embeds[0] - embeds[1]).norm(), 5 * eps);
  }
}

TEST(Scenes, MatteImageMatchesScanlineTracer) {
  GenConfig g;
  g.n_test = 3;
  g.resolution = 32;
  const auto cams = generate_cameras(g, false);
  const Scene s = matte_scene();
  for (const Camera& c : cams) {
    const Image img = render_ground_truth(s, c);
    const std::string bytes = encode_ppm(img);
    Image ref(c.width, c.height);
    for (int y = 0; y < c.height; ++y)
      for (int x = 0; x < c.width; ++x) ref.set(x, y, scanline_pixel(c.position(), c.focal, c.width, c.height, x, y));
    const std::string ref_bytes = encode_ppm(ref);
    ASSERT_EQ(bytes.size(), ref_bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
      ASSERT_LE(std::abs(int(static_cast<unsigned char>(bytes[i])) - int(static_cast<unsigned char>(ref_bytes[i]))), 1) << i;
  }
}

TEST(Scenes, TestRingIndependentOfSeed) {
  const auto a = generate_cameras(small_gen(1), false);
  const auto b = generate_cameras(small_gen(2), false);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].pose, b[i].pose);
  const auto ta = generate_cameras(small_gen(1), true);
  const auto tb = generate_cameras(small_gen(2), true);
  EXPECT_NE(ta[0].pose, tb[0].pose);
  for (const auto& c : ta) {
    EXPECT_NO_THROW(c.validate());
    EXPECT_NEAR(c.position().norm(), 2.0, 1e-12);
  }
}

TEST(Scenes, DatasetGenerationIsDeterministic) {
  const auto d1 = scratch_dir("gen_a");
  const auto d2 = scratch_dir("gen_b");
  gen_dataset(glossy_scene(), small_gen(7), d1);
  auto g = small_gen(7);
  g.threads = 3;
  gen_dataset(glossy_scene(), g, d2);
  EXPECT_TRUE(same_tree(d1, d2));
  EXPECT_TRUE(std::filesystem::exists(d1 / "transforms_train.json"));
  EXPECT_TRUE(std::filesystem::exists(d1 / "test" / "r_001.ppm"));
}

TEST(Scenes, InvalidGenerationRequestsRejected) {
  auto g = small_gen(0);
  g.n_train = 0;
  EXPECT_THROW(gen_dataset(matte_scene(), g, scratch_dir("bad_gen")), InputError);
  g = small_gen(0);
  g.resolution = 4;
  EXPECT_THROW(gen_dataset(matte_scene(), g, scratch_dir("bad_gen")), InputError);
  EXPECT_THROW(scene_by_name("shiny"), InputError);
}
