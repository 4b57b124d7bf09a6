#pragma once

// Analytic scenes: closed-form ground-truth radiance, thin-shell density
// fields around the surfaces, and posed-image dataset generation.

#include "linerf/common.hpp"
#include "linerf/dataset.hpp"
#include "linerf/geometry.hpp"
#include "linerf/image.hpp"
#include "linerf/parallel.hpp"
#include "linerf/render.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace linerf {

struct Material {
  Vec3d diffuse = Vec3d::Constant(0.5);
  double specular = 0.0;  // weight of the Phong lobe and the mirror lookup
  double shininess = 32.0;
  bool reflect_environment = false;
  // Optional checkerboard: alternates `diffuse` and `checker_color` in tiles of
  // `checker_size` (plane coordinates).
  std::optional<Vec3d> checker_color;
  double checker_size = 0.25;
};

struct Sphere {
  Vec3d center = Vec3d::Zero();
  double radius = 1.0;
  Material material;
};

/// Square patch through `point` with unit `normal`; `half_extent` along the
/// in-plane axes `u` and normal x u.
struct Plane {
  Vec3d point = Vec3d::Zero();
  Vec3d normal = Vec3d(0, 1, 0);
  Vec3d u = Vec3d(1, 0, 0);
  double half_extent = 1.0;
  Material material;

  Vec3d v() const { return normal.cross(u); }
};

struct Light {
  Vec3d direction = Vec3d(0, 1, 0);  // unit, pointing toward the light
  double intensity = 1.0;
};

enum class Environment { none, stripes };

struct Scene {
  std::string name;
  std::vector<Sphere> spheres;
  std::vector<Plane> planes;
  std::vector<Light> lights;
  double ambient = 0.0;
  Vec3d background = Vec3d::Ones();
  Environment environment = Environment::none;
  Aabb bounds;  // encloses every primitive

  void validate() const {
    auto check = [](const Material& m) {
      if ((m.diffuse.array() < 0).any() || (m.diffuse.array() > 1).any() || m.specular < 0 || m.specular > 1)
        throw InputError("scene: material components must lie in [0,1]");
    };
    for (const auto& s : spheres) {
      if (!(s.radius > 0) || !s.center.allFinite()) throw InputError("scene: invalid sphere");
      check(s.material);
    }
    for (const auto& p : planes) {
      if (!(p.half_extent > 0) || !p.point.allFinite()) throw InputError("scene: invalid plane");
      check(p.material);
    }
  }
};

/// Procedural environment: sky gradient with azimuthal warm stripes.
inline Vec3d environment_radiance(Environment env, const Vec3d& r) {
  if (env == Environment::none) return Vec3d::Zero();
  const double up = std::clamp(r.y(), -1.0, 1.0);
  const Vec3d sky = Vec3d(0.35, 0.55, 0.9) * (0.55 + 0.45 * std::max(up, 0.0));
  const Vec3d ground(0.25, 0.22, 0.2);
  const double t = std::clamp(0.5 + 2.0 * up, 0.0, 1.0);
  const Vec3d base = ground * (1.0 - t) + sky * t;
  // Azimuthal stripes fade out toward the poles so the map stays smooth there.
  const double az = std::atan2(r.z(), r.x());
  const double horizontal = 1.0 - up * up;
  const double stripe = 0.5 + 0.5 * std::sin(5.0 * az) * horizontal * horizontal;
  return 0.6 * base + 0.4 * stripe * Vec3d(0.95, 0.65, 0.25);
}

inline Vec3d material_albedo(const Material& m, const Plane* plane, const Vec3d& p) {
  if (!m.checker_color || !plane) return m.diffuse;
  const Vec3d local = p - plane->point;
  const long a = static_cast<long>(std::floor(local.dot(plane->u) / m.checker_size));
  const long b = static_cast<long>(std::floor(local.dot(plane->v()) / m.checker_size));
  return ((a + b) % 2 == 0) ? m.diffuse : *m.checker_color;
}

/// Lambert + Phong + mirror environment lookup, clamped to [0,1].
/// `d` is the incoming ray direction.
inline Vec3d shade(const Scene& scene, const Material& m, const Vec3d& albedo, const Vec3d& normal, const Vec3d& d) {
  Vec3d n = normal;
  if (n.dot(d) > 0) n = -n;  // shade the side facing the viewer
  double lambert = scene.ambient;
  for (const Light& l : scene.lights) lambert += l.intensity * std::max(0.0, n.dot(l.direction));
  Vec3d c = albedo * lambert;
  if (m.specular > 0) {
    const Vec3d r = d - 2.0 * d.dot(n) * n;
    double phong = 0.0;
    for (const Light& l : scene.lights) phong += l.intensity * std::pow(std::max(0.0, r.dot(l.direction)), m.shininess);
    c += m.specular * Vec3d::Constant(phong);
    if (m.reflect_environment) c += m.specular * environment_radiance(scene.environment, r);
  }
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

struct Hit {
  double t = 0;
  Vec3d point;
  Vec3d normal;
  const Material* material = nullptr;
  const Plane* plane = nullptr;
};

inline std::optional<Hit> intersect(const Scene& scene, const Vec3d& o, const Vec3d& d, double t_min = 1e-9) {
  std::optional<Hit> best;
  for (const Sphere& s : scene.spheres) {
    const Vec3d oc = o - s.center;
    const double b = oc.dot(d);
    const double c = oc.squaredNorm() - s.radius * s.radius;
    const double disc = b * b - c;
    if (disc < 0) continue;
    const double sq = std::sqrt(disc);
    double t = -b - sq;
    if (t < t_min) t = -b + sq;
    if (t < t_min || (best && t >= best->t)) continue;
    Hit h;
    h.t = t;
    h.point = o + t * d;
    h.normal = (h.point - s.center) / s.radius;
    h.material = &s.material;
    best = h;
  }
  for (const Plane& p : scene.planes) {
    const double denom = p.normal.dot(d);
    if (std::abs(denom) < 1e-12) continue;
    const double t = p.normal.dot(p.point - o) / denom;
    if (t < t_min || (best && t >= best->t)) continue;
    const Vec3d x = o + t * d;
    const Vec3d local = x - p.point;
    if (std::abs(local.dot(p.u)) > p.half_extent || std::abs(local.dot(p.v())) > p.half_extent) continue;
    Hit h;
    h.t = t;
    h.point = x;
    h.normal = p.normal;
    h.material = &p.material;
    h.plane = &p;
    best = h;
  }
  return best;
}

/// Ground-truth radiance along a ray (nearest hit for t > 0).
inline Vec3d gt_radiance(const Scene& scene, const Ray& ray) {
  const auto hit = intersect(scene, ray.origin, ray.direction);
  if (!hit) return scene.background;
  return shade(scene, *hit->material, material_albedo(*hit->material, hit->plane, hit->point), hit->normal, ray.direction);
}

struct SurfacePoint {
  Vec3d point;
  Vec3d normal;
  double distance = std::numeric_limits<double>::infinity();
  const Material* material = nullptr;
  const Plane* plane = nullptr;
};

/// Closest point on any primitive surface.
inline SurfacePoint nearest_surface(const Scene& scene, const Vec3d& x) {
  SurfacePoint best;
  for (const Sphere& s : scene.spheres) {
    Vec3d dir = x - s.center;
    const double len = dir.norm();
    dir = len > 0 ? Vec3d(dir / len) : Vec3d(0, 1, 0);
    const double dist = std::abs(len - s.radius);
    if (dist < best.distance) best = {s.center + s.radius * dir, dir, dist, &s.material, nullptr};
  }
  for (const Plane& p : scene.planes) {
    const Vec3d local = x - p.point;
    const double a = std::clamp(local.dot(p.u), -p.half_extent, p.half_extent);
    const double b = std::clamp(local.dot(p.v()), -p.half_extent, p.half_extent);
    const Vec3d q = p.point + a * p.u + b * p.v();
    const double dist = (x - q).norm();
    if (dist < best.distance) best = {q, p.normal, dist, &p.material, &p};
  }
  return best;
}

/// Shading of the surface point nearest to x as seen along direction d.
inline Vec3d shade_at(const Scene& scene, const Vec3d& x, const Vec3d& d) {
  const SurfacePoint sp = nearest_surface(scene, x);
  if (!sp.material) return scene.background;
  return shade(scene, *sp.material, material_albedo(*sp.material, sp.plane, sp.point), sp.normal, d);
}

enum class FeatureMode { identity, shading };

/// Density concentrated in a shell of width `shell_width` just inside every
/// surface (on the side opposite its normal): sigma = amplitude / width in
/// the shell, 0 elsewhere. A perpendicular chord accumulates optical depth
/// `amplitude` regardless of the width, and a ray's first shell sample lies
/// within one sample spacing of the true intersection.
/// Features are the position itself (identity) or [surface point; normal]
/// (shading); the decoder shades the corresponding surface point.
class AnalyticField {
 public:
  using scalar_type = double;

  /// exp(-16) < 1e-6: a perpendicular crossing is opaque to within 1e-6.
  static constexpr double kDefaultAmplitude = 16.0;

  AnalyticField(const Scene& scene, double shell_width, FeatureMode mode = FeatureMode::identity,
                double amplitude = kDefaultAmplitude)
      : scene_(&scene), width_(shell_width), amplitude_(amplitude), mode_(mode) {
    if (!(shell_width > 0)) throw InputError("analytic field: shell width must be > 0");
  }

  double shell_width() const { return width_; }
  double amplitude() const { return amplitude_; }
  const Scene& scene() const { return *scene_; }

  double density(const Vec3d& x) const {
    const SurfacePoint sp = nearest_surface(*scene_, x);
    return sp.distance < width_ && (x - sp.point).dot(sp.normal) <= 0.0 ? amplitude_ / width_ : 0.0;
  }

  Matrix<double> features(const Matrix3X<double>& xs) const {
    if (mode_ == FeatureMode::identity) return xs;
    Matrix<double> out(6, xs.cols());
    for (Eigen::Index i = 0; i < xs.cols(); ++i) {
      const SurfacePoint sp = nearest_surface(*scene_, xs.col(i));
      out.col(i) << sp.point, sp.normal;
    }
    return out;
  }

  Vector<double> densities(const Matrix3X<double>& xs, const Matrix<double>& /*feats*/) const {
    Vector<double> s(xs.cols());
    for (Eigen::Index i = 0; i < xs.cols(); ++i) s[i] = density(xs.col(i));
    return s;
  }

  Matrix<double> colors(const Matrix<double>& feats, const Vec3d& d) const {
    Matrix<double> out(3, feats.cols());
    for (Eigen::Index i = 0; i < feats.cols(); ++i) {
      if (mode_ == FeatureMode::identity) {
        out.col(i) = shade_at(*scene_, feats.col(i), d);
      } else {
        const Vec3d p = feats.col(i).head<3>();
        Vec3d n = feats.col(i).tail<3>();
        n = n.norm() > 0 ? Vec3d(n.normalized()) : Vec3d(0, 1, 0);
        const SurfacePoint sp = nearest_surface(*scene_, p);
        out.col(i) = sp.material ? shade(*scene_, *sp.material, material_albedo(*sp.material, sp.plane, p), n, d)
                                 : scene_->background;
      }
    }
    return out;
  }

  Vec3d background(const Vec3d& /*d*/) const { return scene_->background; }

 private:
  const Scene* scene_;
  double width_;
  double amplitude_;
  FeatureMode mode_;
};

// ---------------------------------------------------------------------------
// Canonical scenes

namespace detail {

inline Scene base_scene() {
  Scene s;
  s.lights = {{Vec3d(0.4, 1.0, 0.3).normalized(), 0.8}, {Vec3d(-0.6, 0.5, -0.4).normalized(), 0.3}};
  s.ambient = 0.1;
  s.background = Vec3d::Ones();
  s.bounds = Aabb{Vec3d(-0.6, -0.4, -0.6), Vec3d(0.6, 0.4, 0.6)};
  Plane floor;
  floor.point = Vec3d(0, -0.3, 0);
  floor.normal = Vec3d(0, 1, 0);
  floor.u = Vec3d(1, 0, 0);
  floor.half_extent = 0.5;
  floor.material.diffuse = Vec3d(0.75, 0.73, 0.68);
  floor.material.checker_color = Vec3d(0.5, 0.52, 0.56);
  floor.material.checker_size = 0.25;
  s.planes.push_back(floor);
  return s;
}

}  // namespace detail

/// Diffuse sphere on a checkered floor.
inline Scene matte_scene() {
  Scene s = detail::base_scene();
  s.name = "matte";
  Sphere ball;
  ball.center = Vec3d(0, 0, 0);
  ball.radius = 0.3;
  ball.material.diffuse = Vec3d(0.8, 0.3, 0.25);
  s.spheres.push_back(ball);
  return s;
}

/// Same geometry; the sphere is a strong Phong reflector of a striped
/// procedural environment.
inline Scene glossy_scene() {
  Scene s = detail::base_scene();
  s.name = "glossy";
  s.environment = Environment::stripes;
  Sphere ball;
  ball.center = Vec3d(0, 0, 0);
  ball.radius = 0.3;
  ball.material.diffuse = Vec3d(0.15, 0.15, 0.2);
  ball.material.specular = 0.6;
  ball.material.shininess = 24.0;
  ball.material.reflect_environment = true;
  s.spheres.push_back(ball);
  return s;
}

inline Scene scene_by_name(const std::string& name) {
  if (name == "matte") return matte_scene();
  if (name == "glossy") return glossy_scene();
  throw InputError("unknown scene '" + name + "' (expected matte|glossy)");
}

// ---------------------------------------------------------------------------
// Dataset generation

struct GenConfig {
  int n_train = 30;
  int n_test = 10;
  int resolution = 64;
  double radius = 2.0;
  double camera_angle_x = 0.75;
  std::uint64_t seed = 0;
  double min_elevation_deg = 15.0;
  double max_elevation_deg = 65.0;
  double test_elevation_deg = 30.0;
  std::size_t threads = 0;
};

/// Pixel color with 2x2 supersampling (sub-pixel offsets 1/4 and 3/4).
inline Vec3d supersampled_pixel(const Scene& scene, const Camera& cam, int x, int y) {
  Vec3d acc = Vec3d::Zero();
  for (int sy = 0; sy < 2; ++sy)
    for (int sx = 0; sx < 2; ++sx) {
      const Vec3d d = cam.direction(x + 0.25 + 0.5 * sx, y + 0.25 + 0.5 * sy);
      acc += gt_radiance(scene, Ray(cam.position(), d, 0.0, std::numeric_limits<double>::max()));
    }
  return acc / 4.0;
}

inline Image render_ground_truth(const Scene& scene, const Camera& cam, std::size_t threads = 1) {
  Image img(cam.width, cam.height);
  parallel_for(static_cast<std::size_t>(cam.height), threads, [&](std::size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < cam.width; ++x) img.set(x, y, supersampled_pixel(scene, cam, x, y));
  });
  return img;
}

/// Training cameras: seeded, area-uniform over an elevation band of the
/// upper hemisphere. Test cameras: a fixed ring independent of the seed.
inline std::vector<Camera> generate_cameras(const GenConfig& cfg, bool train) {
  const double focal = focal_from_angle(cfg.resolution, cfg.camera_angle_x);
  std::vector<Camera> cams;
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x7472u));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const int n = train ? cfg.n_train : cfg.n_test;
  const double s0 = std::sin(cfg.min_elevation_deg * kPi / 180.0);
  const double s1 = std::sin(cfg.max_elevation_deg * kPi / 180.0);
  for (int i = 0; i < n; ++i) {
    double elev, az;
    if (train) {
      elev = std::asin(s0 + (s1 - s0) * uni(rng));
      az = 2.0 * kPi * uni(rng);
    } else {
      elev = cfg.test_elevation_deg * kPi / 180.0;
      az = 2.0 * kPi * (i + 0.5) / n;
    }
    const Vec3d eye = cfg.radius * Vec3d(std::cos(elev) * std::cos(az), std::sin(elev), std::cos(elev) * std::sin(az));
    Camera c;
    c.pose = Camera::look_at(eye, Vec3d::Zero());
    c.focal = focal;
    c.width = cfg.resolution;
    c.height = cfg.resolution;
    cams.push_back(c);
  }
  return cams;
}

/// Renders and writes a dataset to `out_dir`; identical inputs produce
/// byte-identical directories.
inline DatasetSplits gen_dataset(const Scene& scene, const GenConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.n_train < 1 || cfg.n_test < 1) throw InputError("gen_dataset: view counts must be >= 1");
  if (cfg.resolution < 8) throw InputError("gen_dataset: resolution must be >= 8");
  scene.validate();
  const std::size_t threads = resolve_thread_count(cfg.threads ? std::optional<std::size_t>(cfg.threads) : std::nullopt);
  DatasetSplits out;
  for (int pass = 0; pass < 2; ++pass) {
    const bool train = pass == 0;
    Dataset& ds = train ? out.train : out.test;
    ds.split = train ? "train" : "test";
    ds.meta = DatasetMeta{scene.name, cfg.seed, cfg.resolution, scene.background, cfg.camera_angle_x, scene.bounds};
    const auto cams = generate_cameras(cfg, train);
    ds.views.resize(cams.size());
    parallel_for(cams.size(), threads, [&](std::size_t i) {
      View& v = ds.views[i];
      v.camera = cams[i];
      v.image = render_ground_truth(scene, cams[i]);
      char name[32];
      std::snprintf(name, sizeof name, "r_%03zu.ppm", i);
      v.file = ds.split + "/" + name;
    });
    write_split(out_dir, ds);
  }
  return out;
}

}  // namespace linerf
