#pragma once

// Sampling, compositing weights and the three per-ray estimators:
//   classic: sum_i w_i f_c(h_i, d) + (1 - W) C_bg
//   linerf:  W f_c(sum_i (w_i / W) h_i, d) + (1 - W) C_bg
//   split:   as linerf, integrating an intermediate trunk activation and
//            applying the remaining trunk layers after integration.
// Every renderer here is a pure function of (field, ray, samples).

#include "linerf/common.hpp"
#include "linerf/geometry.hpp"
#include "linerf/image.hpp"
#include "linerf/parallel.hpp"

#include <concepts>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace linerf {

/// Rays whose accumulated foreground mass is at or below this are rendered
/// as pure background by the feature-integrating renderers.
inline constexpr double kForegroundEpsilon = 1e-6;

enum class SamplingMode { midpoint, stratified };

struct SampleBatch {
  std::vector<double> t;
  std::vector<double> delta;

  std::size_t size() const { return t.size(); }
};

/// One sample per bin of an even partition of [t_near, t_far]: uniform within
/// the bin (stratified) or at its center (midpoint). The last spacing runs to
/// t_far.
inline SampleBatch stratified_sample(const Ray& ray, int n, SamplingMode mode,
                                     std::mt19937_64* rng = nullptr) {
  if (n < 1) throw InputError("stratified_sample: N must be >= 1");
  if (mode == SamplingMode::stratified && !rng)
    throw InputError("stratified_sample: stratified mode needs a generator");
  SampleBatch s;
  s.t.resize(n);
  s.delta.resize(n);
  const double width = (ray.t_far - ray.t_near) / n;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    const double u = mode == SamplingMode::midpoint ? 0.5 : uni(*rng);
    s.t[i] = ray.t_near + (i + u) * width;
  }
  for (int i = 0; i + 1 < n; ++i) s.delta[i] = s.t[i + 1] - s.t[i];
  s.delta[n - 1] = ray.t_far - s.t[n - 1];
  return s;
}

template <class Scalar>
Matrix3X<Scalar> sample_positions(const Ray& ray, const SampleBatch& s) {
  Matrix3X<Scalar> xs(3, static_cast<Eigen::Index>(s.size()));
  for (std::size_t i = 0; i < s.size(); ++i) xs.col(static_cast<Eigen::Index>(i)) = ray.at(s.t[i]).cast<Scalar>();
  return xs;
}

template <class Scalar>
struct RenderWeights {
  Vector<Scalar> alpha;
  Vector<Scalar> transmittance;  // T_i, T_1 = 1
  Vector<Scalar> weights;        // T_i * alpha_i
  Scalar fg_mass = 0;            // sum of weights
  Scalar final_transmittance = 1;

  Eigen::Index size() const { return weights.size(); }
};

template <class Scalar>
RenderWeights<Scalar> compute_weights(const Vector<Scalar>& sigmas, const std::vector<double>& deltas) {
  const Eigen::Index n = sigmas.size();
  if (static_cast<std::size_t>(n) != deltas.size()) throw InputError("compute_weights: length mismatch");
  RenderWeights<Scalar> w;
  w.alpha.resize(n);
  w.transmittance.resize(n);
  w.weights.resize(n);
  Scalar depth = 0;
  Scalar mass = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar s = sigmas[i];
    const Scalar d = static_cast<Scalar>(deltas[static_cast<std::size_t>(i)]);
    if (!(s >= 0) || !std::isfinite(static_cast<double>(s))) throw InputError("compute_weights: density must be finite and >= 0");
    if (!(d > 0)) throw InputError("compute_weights: spacing must be > 0");
    const Scalar tau = s * d;
    w.transmittance[i] = std::exp(-depth);
    w.alpha[i] = -std::expm1(-tau);
    w.weights[i] = w.transmittance[i] * w.alpha[i];
    mass += w.weights[i];
    depth += tau;
  }
  w.fg_mass = mass;
  w.final_transmittance = std::exp(-depth);
  return w;
}

/// d(loss)/d(sigma) from d(loss)/d(weights):
///   dL/dsigma_k = delta_k * (T_{k+1} g_k - sum_{i>k} w_i g_i).
template <class Scalar>
Vector<Scalar> weights_backward(const RenderWeights<Scalar>& w, const std::vector<double>& deltas,
                                const Vector<Scalar>& grad_weights) {
  const Eigen::Index n = w.size();
  Vector<Scalar> out(n);
  Scalar suffix = 0;  // sum_{i>k} w_i g_i
  for (Eigen::Index k = n - 1; k >= 0; --k) {
    const Scalar t_next = w.transmittance[k] * (Scalar(1) - w.alpha[k]);
    out[k] = static_cast<Scalar>(deltas[static_cast<std::size_t>(k)]) * (t_next * grad_weights[k] - suffix);
    suffix += w.weights[k] * grad_weights[k];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Field interface

template <class F>
concept RadianceField = requires(const F& f, const Matrix3X<typename F::scalar_type>& xs,
                                 const Matrix<typename F::scalar_type>& feats,
                                 const Vec3<typename F::scalar_type>& d) {
  { f.features(xs) } -> std::convertible_to<Matrix<typename F::scalar_type>>;
  { f.densities(xs, feats) } -> std::convertible_to<Vector<typename F::scalar_type>>;
  { f.colors(feats, d) } -> std::convertible_to<Matrix<typename F::scalar_type>>;
  { f.background(d) } -> std::convertible_to<Vec3<typename F::scalar_type>>;
};

template <class F>
concept SplittableField = RadianceField<F> && requires(const F& f, const Matrix3X<typename F::scalar_type>& xs,
                                                       const Matrix<typename F::scalar_type>& m, int k) {
  { f.trunk_depth() } -> std::convertible_to<int>;
  f.split_features(xs, k);
  { f.finish_split(m, m, k) } -> std::convertible_to<Matrix<typename F::scalar_type>>;
};

enum class RendererKind { classic, linerf, split };

struct RendererSpec {
  RendererKind kind = RendererKind::linerf;
  int split = 0;

  static RendererSpec parse(const std::string& s) {
    if (s == "classic") return {RendererKind::classic, 0};
    if (s == "linerf") return {RendererKind::linerf, 0};
    if (s.rfind("split:", 0) == 0) {
      const std::string k = s.substr(6);
      if (k.empty() || k.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError("renderer: bad split index in '" + s + "'");
      return {RendererKind::split, std::stoi(k)};
    }
    throw ConfigError("renderer: expected classic|linerf|split:<k>, got '" + s + "'");
  }

  std::string str() const {
    switch (kind) {
      case RendererKind::classic: return "classic";
      case RendererKind::linerf: return "linerf";
      case RendererKind::split: return "split:" + std::to_string(split);
    }
    return "?";
  }

  bool operator==(const RendererSpec&) const = default;
};

template <RadianceField F>
Vec3<typename F::scalar_type> render_classic(const F& field, const Ray& ray, const SampleBatch& s) {
  using S = typename F::scalar_type;
  const Vec3<S> d = ray.direction.cast<S>();
  const Matrix3X<S> xs = sample_positions<S>(ray, s);
  const Matrix<S> h = field.features(xs);
  const RenderWeights<S> w = compute_weights<S>(field.densities(xs, h), s.delta);
  const Matrix<S> c = field.colors(h, d);
  Vec3<S> out = c * w.weights;
  out += (S(1) - w.fg_mass) * field.background(d);
  return out;
}

namespace detail {

// Shared tail of the feature-integrating renderers.
template <class S, class Decode>
Vec3<S> integrate_and_decode(const RenderWeights<S>& w, const Matrix<S>& feats, const Matrix<S>& enc,
                             const Vec3<S>& bg, Decode&& decode) {
  if (!(w.fg_mass > S(kForegroundEpsilon))) return bg;
  const Matrix<S> bar = (feats * w.weights) / w.fg_mass;
  Matrix<S> enc_bar;
  if (enc.size() > 0) enc_bar = (enc * w.weights) / w.fg_mass;
  const Vec3<S> fg = decode(bar, enc_bar);
  return w.fg_mass * fg + (S(1) - w.fg_mass) * bg;
}

}  // namespace detail

template <RadianceField F>
Vec3<typename F::scalar_type> render_linerf(const F& field, const Ray& ray, const SampleBatch& s) {
  using S = typename F::scalar_type;
  const Vec3<S> d = ray.direction.cast<S>();
  const Matrix3X<S> xs = sample_positions<S>(ray, s);
  const Matrix<S> h = field.features(xs);
  const RenderWeights<S> w = compute_weights<S>(field.densities(xs, h), s.delta);
  return detail::integrate_and_decode<S>(w, h, Matrix<S>(), field.background(d),
                                         [&](const Matrix<S>& bar, const Matrix<S>&) {
                                           return Vec3<S>(field.colors(bar, d).col(0));
                                         });
}

template <SplittableField F>
Vec3<typename F::scalar_type> render_split(const F& field, const Ray& ray, const SampleBatch& s, int split) {
  using S = typename F::scalar_type;
  if (split < 0 || split > field.trunk_depth())
    throw ConfigError("render_split: split index " + std::to_string(split) + " out of range");
  const Vec3<S> d = ray.direction.cast<S>();
  const Matrix3X<S> xs = sample_positions<S>(ray, s);
  const auto sf = field.split_features(xs, split);
  const RenderWeights<S> w = compute_weights<S>(field.densities(xs, sf.full), s.delta);
  return detail::integrate_and_decode<S>(w, sf.at_split, sf.encoding, field.background(d),
                                         [&](const Matrix<S>& bar, const Matrix<S>& enc_bar) {
                                           const Matrix<S> h = field.finish_split(bar, enc_bar, split);
                                           return Vec3<S>(field.colors(h, d).col(0));
                                         });
}

/// Normalized ray embedding H(r) = sum_i (w_i / W) h_i paired with d; zero
/// when the ray carries no foreground mass.
template <RadianceField F>
std::pair<Vector<typename F::scalar_type>, Vec3d> ray_embedding(const F& field, const Ray& ray,
                                                                const SampleBatch& s) {
  using S = typename F::scalar_type;
  const Matrix3X<S> xs = sample_positions<S>(ray, s);
  const Matrix<S> h = field.features(xs);
  const RenderWeights<S> w = compute_weights<S>(field.densities(xs, h), s.delta);
  if (!(w.fg_mass > S(kForegroundEpsilon))) return {Vector<S>::Zero(h.rows()), ray.direction};
  return {Vector<S>((h * w.weights) / w.fg_mass), ray.direction};
}

template <RadianceField F>
Vec3<typename F::scalar_type> render_ray(const F& field, const Ray& ray, const SampleBatch& s,
                                         const RendererSpec& spec) {
  switch (spec.kind) {
    case RendererKind::classic: return render_classic(field, ray, s);
    case RendererKind::linerf: return render_linerf(field, ray, s);
    case RendererKind::split:
      if constexpr (SplittableField<F>) return render_split(field, ray, s, spec.split);
      else throw ConfigError("render_ray: this field does not support split rendering");
  }
  throw ConfigError("render_ray: unknown renderer");
}

// ---------------------------------------------------------------------------
// Images

struct RenderConfig {
  RendererSpec renderer;
  int samples_per_ray = 64;
  SamplingMode sampling = SamplingMode::midpoint;
  std::uint64_t seed = 0;
  std::optional<Aabb> bounds;  // rays are clipped to this box when set
  double t_near = 2.0;         // used when no bounds are given
  double t_far = 6.0;
  std::size_t threads = 0;     // 0: resolve_thread_count()
};

/// Camera ray through the center of pixel (x, y), clipped to the configured
/// bounds. Nothing when the ray misses the bounds.
inline std::optional<Ray> pixel_ray(const Camera& cam, double px, double py, const RenderConfig& cfg) {
  const Vec3d o = cam.position();
  const Vec3d d = cam.direction(px, py);
  if (cfg.bounds) {
    const auto hit = cfg.bounds->intersect(o, d);
    if (!hit) return std::nullopt;
    return Ray(o, d, hit->first, hit->second);
  }
  return Ray(o, d, cfg.t_near, cfg.t_far);
}

template <RadianceField F>
Image render_image(const F& field, const Camera& cam, const RenderConfig& cfg) {
  using S = typename F::scalar_type;
  if (cam.width < 1 || cam.height < 1) throw InputError("render_image: zero resolution");
  cam.validate();
  Image img(cam.width, cam.height);
  const std::size_t threads = resolve_thread_count(cfg.threads ? std::optional<std::size_t>(cfg.threads) : std::nullopt);
  parallel_for(static_cast<std::size_t>(cam.height), threads, [&](std::size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < cam.width; ++x) {
      const auto ray = pixel_ray(cam, x + 0.5, y + 0.5, cfg);
      Vec3d rgb;
      if (!ray) {
        rgb = field.background(cam.direction(x + 0.5, y + 0.5).cast<S>()).template cast<double>();
      } else {
        std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(y) * cam.width + x));
        const SampleBatch s = stratified_sample(*ray, cfg.samples_per_ray, cfg.sampling, &rng);
        rgb = render_ray(field, *ray, s, cfg.renderer).template cast<double>();
      }
      img.set(x, y, rgb.cwiseMax(0.0).cwiseMin(1.0));
    }
  });
  return img;
}

}  // namespace linerf
