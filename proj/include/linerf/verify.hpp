#pragma once

// Checks run against trained models: estimator equivalence (Dirac density,
// split at full depth) and second-order bound sweeps over test rays.

#include "linerf/bounds.hpp"
#include "linerf/dataset.hpp"
#include "linerf/field.hpp"
#include "linerf/render.hpp"
#include "linerf/scenes.hpp"
#include "linerf/train.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace linerf {

/// Wraps a field and replaces its density by a single spike at the sample
/// where the wrapped density peaks, so exactly one compositing weight is
/// non-zero.
template <RadianceField F>
class DiracField {
 public:
  using scalar_type = typename F::scalar_type;
  using S = scalar_type;

  explicit DiracField(const F& inner, S spike = S(1e6)) : inner_(&inner), spike_(spike) {}

  Matrix<S> features(const Matrix3X<S>& xs) const { return inner_->features(xs); }
  Vector<S> densities(const Matrix3X<S>& xs, const Matrix<S>& feats) const {
    const Vector<S> base = inner_->densities(xs, feats);
    Vector<S> out = Vector<S>::Zero(base.size());
    if (base.size() > 0) {
      Eigen::Index k = 0;
      base.maxCoeff(&k);
      out[k] = spike_;
    }
    return out;
  }
  Matrix<S> colors(const Matrix<S>& feats, const Vec3<S>& d) const { return inner_->colors(feats, d); }
  Vec3<S> background(const Vec3<S>& d) const { return inner_->background(d); }

  int trunk_depth() const
    requires SplittableField<F>
  {
    return inner_->trunk_depth();
  }
  auto split_features(const Matrix3X<S>& xs, int k) const
    requires SplittableField<F>
  {
    return inner_->split_features(xs, k);
  }
  Matrix<S> finish_split(const Matrix<S>& bar, const Matrix<S>& enc, int k) const
    requires SplittableField<F>
  {
    return inner_->finish_split(bar, enc, k);
  }

 private:
  const F* inner_;
  S spike_;
};

/// Deterministic pixel rays from a dataset, clipped to `bounds`; misses are
/// skipped.
inline std::vector<Ray> sample_dataset_rays(const Dataset& data, const Aabb& bounds, int count, std::uint64_t seed) {
  if (data.empty()) throw DatasetError("no views to sample rays from");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> view(0, data.views.size() - 1);
  RenderConfig rc;
  rc.bounds = bounds;
  std::vector<Ray> rays;
  for (long attempt = 0; static_cast<int>(rays.size()) < count && attempt < 1000L * count; ++attempt) {
    const View& v = data.views[view(rng)];
    std::uniform_real_distribution<double> ux(0.0, v.camera.width), uy(0.0, v.camera.height);
    const double px = ux(rng), py = uy(rng);
    if (auto r = pixel_ray(v.camera, px, py, rc)) rays.push_back(*r);
  }
  return rays;
}

struct EquivalenceSummary {
  int rays = 0;
  double dirac_max_diff = 0;  // max per-channel |classic - linerf| under a Dirac density
  double split_max_diff = 0;  // max |split:depth - linerf|; 0 when bit-identical
  bool split_bitwise = true;

  bool ok(double tol = 1e-6) const { return dirac_max_diff < tol && split_bitwise; }
};

template <class Scalar>
EquivalenceSummary verify_equivalence(const FieldModel<Scalar>& model, const Dataset& data, int rays, int samples,
                                      std::uint64_t seed) {
  EquivalenceSummary s;
  const auto rs = sample_dataset_rays(data, render_bounds(model, data.meta), rays, seed);
  const DiracField<FieldModel<Scalar>> dirac(model);
  const RendererSpec full{RendererKind::split, model.trunk_depth()};
  for (const Ray& r : rs) {
    const SampleBatch b = stratified_sample(r, samples, SamplingMode::midpoint);
    const Vec3<Scalar> c = render_classic(dirac, r, b);
    const Vec3<Scalar> l = render_linerf(dirac, r, b);
    s.dirac_max_diff = std::max(s.dirac_max_diff, static_cast<double>((c - l).cwiseAbs().maxCoeff()));
    const Vec3<Scalar> a = render_ray(model, r, b, RendererSpec{RendererKind::linerf, 0});
    const Vec3<Scalar> z = render_ray(model, r, b, full);
    if (a != z) s.split_bitwise = false;
    s.split_max_diff = std::max(s.split_max_diff, static_cast<double>((a - z).cwiseAbs().maxCoeff()));
    ++s.rays;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Bound sweep

enum class AnchorMode { argmax, surface };

inline const char* to_string(AnchorMode m) { return m == AnchorMode::argmax ? "argmax" : "surface"; }

struct BoundSweepRow {
  int ray = 0;
  AnchorMode mode = AnchorMode::argmax;
  int channel = 0;
  double fg_mass = 0;
  double entropy = 0;
  ChannelBound bound;
  bool violation = false;
};

struct BoundSweep {
  std::vector<BoundSweepRow> rows;
  int rays = 0;
  int jensen_violations = 0;  // margin below -1e-12
  int bound_violations = 0;   // |T2| above U beyond tolerance
  int surface_anchors = 0;
  int extrapolated_hessians = 0;
  double min_margin = std::numeric_limits<double>::infinity();
  std::vector<std::string> messages;
};

/// For each ray with foreground mass: features h_i and normalized weights
/// w_i / W along the ray, anchor h_* at the weight argmax and (when the
/// analytic scene is known) at the true surface intersection, then the
/// per-channel bound report about that anchor.
inline BoundSweep sweep_bounds(const FieldModel<double>& model, const Dataset& data, const Scene* scene, int rays,
                               int samples, std::uint64_t seed) {
  BoundSweep out;
  const Aabb bounds = render_bounds(model, data.meta);
  const auto candidates = sample_dataset_rays(data, bounds, rays * 20, seed);
  for (const Ray& r : candidates) {
    if (out.rays >= rays) break;
    const SampleBatch b = stratified_sample(r, samples, SamplingMode::midpoint);
    const Matrix3X<double> xs = sample_positions<double>(r, b);
    const Matrix<double> h = model.features(xs);
    const RenderWeights<double> w = compute_weights<double>(model.densities(xs, h), b.delta);
    if (!(w.fg_mass > kForegroundEpsilon)) continue;
    const Vector<double> wn = w.weights / w.fg_mass;
    double entropy = 0;
    for (Eigen::Index i = 0; i < wn.size(); ++i)
      if (wn[i] > 0) entropy -= wn[i] * std::log(wn[i]);

    std::vector<std::pair<AnchorMode, Vector<double>>> anchors;
    Eigen::Index k = 0;
    w.weights.maxCoeff(&k);
    anchors.emplace_back(AnchorMode::argmax, h.col(k));
    if (scene) {
      if (const auto hit = intersect(*scene, r.origin, r.direction)) {
        Matrix3X<double> xstar(3, 1);
        xstar.col(0) = hit->point;
        anchors.emplace_back(AnchorMode::surface, model.features(xstar).col(0));
        ++out.surface_anchors;
      }
    }
    for (const auto& [mode, hstar] : anchors) {
      PerturbationSet p;
      p.anchor = hstar;
      p.weights = wn;
      for (Eigen::Index i = 0; i < h.cols(); ++i) p.deltas.push_back(h.col(i) - hstar);
      const HessianResult hr = hessian_fd(color_decoder(model, r.direction), hstar);
      if (hr.extrapolated) ++out.extrapolated_hessians;
      std::vector<double> norms;
      for (const auto& H : hr.per_output) norms.push_back(spectral_norm(H).value);
      const BoundReport rep = verify_bound_dominance(p, hr.per_output, norms);
      for (std::size_t c = 0; c < rep.channels.size(); ++c) {
        BoundSweepRow row;
        row.ray = out.rays;
        row.mode = mode;
        row.channel = static_cast<int>(c);
        row.fg_mass = w.fg_mass;
        row.entropy = entropy;
        row.bound = rep.channels[c];
        const ChannelBound& cb = row.bound;
        const bool jensen_bad = cb.jensen_margin < -kJensenTolerance;
        const bool bound_bad = cb.u_classic < std::abs(cb.t2_classic) - bound_tolerance(cb.u_classic, cb.t2_classic) ||
                               cb.u_ours < std::abs(cb.t2_ours) - bound_tolerance(cb.u_ours, cb.t2_ours);
        out.jensen_violations += jensen_bad;
        out.bound_violations += bound_bad;
        row.violation = jensen_bad || bound_bad;
        out.min_margin = std::min(out.min_margin, cb.jensen_margin);
        out.rows.push_back(std::move(row));
      }
      for (const auto& v : rep.violations)
        out.messages.push_back("ray " + std::to_string(out.rays) + " (" + to_string(mode) + "): " + v);
    }
    ++out.rays;
  }
  if (out.rays < rays)
    out.messages.push_back("only " + std::to_string(out.rays) + " of " + std::to_string(rays) +
                           " requested rays carried foreground mass");
  return out;
}

inline std::string bound_sweep_csv(const BoundSweep& s) {
  std::string csv =
      "ray,anchor,channel,fg_mass,lambda_entropy,t2_classic,t2_ours,u_classic,u_ours,jensen_margin,hessian_norm,violation\n";
  char buf[512];
  for (const auto& r : s.rows) {
    std::snprintf(buf, sizeof buf, "%d,%s,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%d\n", r.ray, to_string(r.mode),
                  r.channel, r.fg_mass, r.entropy, r.bound.t2_classic, r.bound.t2_ours, r.bound.u_classic,
                  r.bound.u_ours, r.bound.jensen_margin, r.bound.hessian_norm, r.violation ? 1 : 0);
    csv += buf;
  }
  return csv;
}

inline std::string bound_sweep_summary(const BoundSweep& s) {
  std::string t;
  t += "rays: " + std::to_string(s.rays) + "\n";
  t += "rows: " + std::to_string(s.rows.size()) + "\n";
  t += "surface anchors: " + std::to_string(s.surface_anchors) + "\n";
  t += "extrapolated hessians: " + std::to_string(s.extrapolated_hessians) + "\n";
  t += "jensen violations (margin < -1e-12): " + std::to_string(s.jensen_violations) + "\n";
  t += "bound violations (|T2| > U): " + std::to_string(s.bound_violations) + "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", s.rows.empty() ? 0.0 : s.min_margin);
  t += std::string("min jensen margin: ") + buf + "\n";
  for (const auto& m : s.messages) t += "note: " + m + "\n";
  return t;
}

}  // namespace linerf
