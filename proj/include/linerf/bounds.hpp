#pragma once

// Second-order error analysis of the two estimators about an anchor
// feature h_*: with h_i = h_* + dh_i and compositing weights w_i,
//   T2_classic = 1/2 sum_i w_i dh_i^T H dh_i
//   T2_ours    = 1/2 (sum_i w_i dh_i)^T H (sum_j w_j dh_j)
// and their bounds with u_i = ||H||^{1/2} ||dh_i||:
//   U_classic = 1/2 sum_i w_i u_i^2 >= U_ours = 1/2 (sum_i w_i u_i)^2.

#include "linerf/common.hpp"
#include "linerf/field.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace linerf {

struct PerturbationSet {
  Vector<double> anchor;
  std::vector<Vector<double>> deltas;
  Vector<double> weights;

  double weight_sum() const { return weights.sum(); }

  void validate() const {
    if (static_cast<std::size_t>(weights.size()) != deltas.size())
      throw InputError("perturbation set: weight and deviation counts differ");
    for (const auto& d : deltas) {
      if (d.size() != anchor.size()) throw InputError("perturbation set: deviation dimension mismatch");
      if (!d.allFinite()) throw InputError("perturbation set: non-finite deviation");
    }
    if ((weights.array() < 0).any() || !weights.allFinite())
      throw InputError("perturbation set: weights must be finite and >= 0");
    if (weights.sum() > 1.0 + 1e-9) throw InputError("perturbation set: weights sum above 1");
  }

  /// sum_i w_i dh_i
  Vector<double> weighted_deviation() const {
    Vector<double> s = Vector<double>::Zero(anchor.size());
    for (std::size_t i = 0; i < deltas.size(); ++i) s += weights[static_cast<Eigen::Index>(i)] * deltas[i];
    return s;
  }
};

/// Maps a batch of features (one per column) to decoder outputs (one row per
/// output channel).
using BatchDecoder = std::function<Matrix<double>(const Matrix<double>&)>;

struct HessianOptions {
  double relative_step = 1e-3;  // step = relative_step * max(1, ||h||_inf)
  double richardson_tol = 1e-6; // relative disagreement of H(s) and H(s/2) that triggers extrapolation
};

struct HessianResult {
  std::vector<Matrix<double>> per_output;  // symmetric, one per decoder output
  double step = 0;
  double residual = 0;   // max |H(s) - H(s/2)| relative to max |H|
  bool extrapolated = false;
};

namespace detail {

inline std::vector<Matrix<double>> central_hessians(const BatchDecoder& f, const Vector<double>& h, double s) {
  const Eigen::Index n = h.size();
  // Points: center, +-s e_i, and +-s e_i +-s e_j for i < j.
  const Eigen::Index pairs = n * (n - 1) / 2;
  Matrix<double> pts(n, 1 + 2 * n + 4 * pairs);
  pts.colwise() = h;
  Eigen::Index c = 1;
  for (Eigen::Index i = 0; i < n; ++i) {
    pts(i, c++) += s;
    pts(i, c++) -= s;
  }
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      for (int si = -1; si <= 1; si += 2)
        for (int sj = -1; sj <= 1; sj += 2) {
          pts(i, c) += si * s;
          pts(j, c) += sj * s;
          ++c;
        }
  const Matrix<double> v = f(pts);
  std::vector<Matrix<double>> out;
  for (Eigen::Index o = 0; o < v.rows(); ++o) {
    Matrix<double> H(n, n);
    const double f0 = v(o, 0);
    Eigen::Index k = 1;
    for (Eigen::Index i = 0; i < n; ++i) {
      H(i, i) = (v(o, k) - 2.0 * f0 + v(o, k + 1)) / (s * s);
      k += 2;
    }
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) {
        // order: (-,-), (-,+), (+,-), (+,+)
        const double mm = v(o, k), mp = v(o, k + 1), pm = v(o, k + 2), pp = v(o, k + 3);
        k += 4;
        H(i, j) = H(j, i) = (pp - pm - mp + mm) / (4.0 * s * s);
      }
    out.push_back(0.5 * (H + H.transpose()));
  }
  return out;
}

}  // namespace detail

/// Central-difference Hessians of every decoder output, symmetrized. When
/// H(s) and H(s/2) disagree beyond the tolerance the Richardson combination
/// (4 H(s/2) - H(s)) / 3 is returned instead.
inline HessianResult hessian_fd(const BatchDecoder& f, const Vector<double>& h, const HessianOptions& opt = {}) {
  if (h.size() == 0) throw InputError("hessian_fd: empty feature");
  HessianResult r;
  r.step = opt.relative_step * std::max(1.0, h.cwiseAbs().maxCoeff());
  const auto coarse = detail::central_hessians(f, h, r.step);
  const auto fine = detail::central_hessians(f, h, 0.5 * r.step);
  double scale = 0, diff = 0;
  for (std::size_t o = 0; o < coarse.size(); ++o) {
    if (!coarse[o].allFinite() || !fine[o].allFinite())
      throw NumericalError("hessian_fd: non-finite entries for output " + std::to_string(o) + " at step " +
                           std::to_string(r.step) + " and " + std::to_string(0.5 * r.step));
    scale = std::max(scale, fine[o].cwiseAbs().maxCoeff());
    diff = std::max(diff, (coarse[o] - fine[o]).cwiseAbs().maxCoeff());
  }
  r.residual = diff / std::max(scale, 1e-300);
  if (diff > opt.richardson_tol * std::max(scale, 1.0)) {
    r.extrapolated = true;
    for (std::size_t o = 0; o < coarse.size(); ++o) r.per_output.push_back((4.0 * fine[o] - coarse[o]) / 3.0);
  } else {
    r.per_output = fine;
  }
  return r;
}

/// Decoder f_c(., d) of a model as a batch function (rgb rows).
inline BatchDecoder color_decoder(const FieldModel<double>& model, const Vec3d& d) {
  return [&model, d](const Matrix<double>& feats) { return model.colors(feats, d); };
}

/// Hessian of one color channel of the model's decoder at feature h.
inline Matrix<double> hessian_fd(const FieldModel<double>& model, const Vector<double>& h, const Vec3d& d, int channel,
                                 const HessianOptions& opt = {}) {
  if (channel < 0 || channel > 2) throw InputError("hessian_fd: channel must be 0, 1 or 2");
  return hessian_fd(color_decoder(model, d), h, opt).per_output[static_cast<std::size_t>(channel)];
}

struct SpectralNormResult {
  double value = 0;
  int iterations = 0;
  bool converged = false;  // false: value came from the eigensolver fallback
};

/// ||H||_2 of a symmetric matrix by power iteration on H^2; falls back to a
/// symmetric eigensolver when the iteration does not settle.
inline SpectralNormResult spectral_norm(const Matrix<double>& H, int max_iterations = 50, double tol = 1e-8) {
  if (H.rows() != H.cols()) throw InputError("spectral_norm: matrix must be square");
  SpectralNormResult r;
  if (H.size() == 0 || H.cwiseAbs().maxCoeff() == 0) {
    r.converged = true;
    return r;
  }
  Vector<double> v(H.rows());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = 1.0 + 0.37 * static_cast<double>(i % 7) - 0.11 * static_cast<double>(i % 3);
  v.normalize();
  double prev = 0;
  for (int k = 0; k < max_iterations; ++k) {
    const Vector<double> hv = H * v;
    const double est = hv.norm();  // -> |lambda_max| as v aligns
    Vector<double> w = H * hv;
    const double wn = w.norm();
    r.iterations = k + 1;
    if (wn == 0) break;
    v = w / wn;
    if (k > 0 && std::abs(est - prev) <= tol * est) {
      r.value = (H * v).norm();
      r.converged = true;
      return r;
    }
    prev = est;
  }
  Eigen::SelfAdjointEigenSolver<Matrix<double>> es(H, Eigen::EigenvaluesOnly);
  r.value = es.eigenvalues().cwiseAbs().maxCoeff();
  r.converged = false;
  return r;
}

struct TaylorTerms {
  double classic = 0;
  double ours = 0;
};

inline TaylorTerms taylor_terms(const PerturbationSet& p, const Matrix<double>& H) {
  if (H.rows() != p.anchor.size() || H.cols() != p.anchor.size()) throw InputError("taylor_terms: Hessian shape mismatch");
  TaylorTerms t;
  for (std::size_t i = 0; i < p.deltas.size(); ++i)
    t.classic += 0.5 * p.weights[static_cast<Eigen::Index>(i)] * p.deltas[i].dot(H * p.deltas[i]);
  const Vector<double> m = p.weighted_deviation();
  t.ours = 0.5 * m.dot(H * m);
  return t;
}

struct UpperBounds {
  double classic = 0;
  double ours = 0;
  std::vector<double> u;
};

inline UpperBounds upper_bounds_from_u(const Vector<double>& weights, const std::vector<double>& u) {
  if (static_cast<std::size_t>(weights.size()) != u.size()) throw InputError("upper_bounds: length mismatch");
  UpperBounds b;
  b.u = u;
  double lin = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double w = weights[static_cast<Eigen::Index>(i)];
    b.classic += 0.5 * w * u[i] * u[i];
    lin += w * u[i];
  }
  b.ours = 0.5 * lin * lin;
  return b;
}

inline UpperBounds upper_bounds(const PerturbationSet& p, double hessian_norm) {
  if (!(hessian_norm >= 0)) throw InputError("upper_bounds: Hessian norm must be >= 0");
  std::vector<double> u;
  for (const auto& d : p.deltas) u.push_back(std::sqrt(hessian_norm) * d.norm());
  return upper_bounds_from_u(p.weights, u);
}

struct ChannelBound {
  double t2_classic = 0;
  double t2_ours = 0;
  double u_classic = 0;
  double u_ours = 0;
  double jensen_margin = 0;
  double hessian_norm = 0;
  std::vector<double> u;
};

struct BoundReport {
  std::vector<ChannelBound> channels;
  double weight_sum = 0;
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
};

inline constexpr double kJensenTolerance = 1e-12;

/// Bound tolerance, scaled to the magnitudes involved.
inline double bound_tolerance(double a, double b) { return 1e-9 * std::max({1.0, std::abs(a), std::abs(b)}); }

/// Checks |T2| <= U for both estimators and U_classic >= U_ours for every
/// channel. Violations are listed; with `strict` the first one throws.
inline BoundReport verify_bound_dominance(const PerturbationSet& p, const std::vector<Matrix<double>>& hessians,
                                          const std::vector<double>& norms, bool strict = false) {
  p.validate();
  if (hessians.size() != norms.size()) throw InputError("verify_bound_dominance: one norm per Hessian required");
  BoundReport rep;
  rep.weight_sum = p.weight_sum();
  for (std::size_t c = 0; c < hessians.size(); ++c) {
    ChannelBound b;
    const TaylorTerms t = taylor_terms(p, hessians[c]);
    const UpperBounds u = upper_bounds(p, norms[c]);
    b.t2_classic = t.classic;
    b.t2_ours = t.ours;
    b.u_classic = u.classic;
    b.u_ours = u.ours;
    b.u = u.u;
    b.jensen_margin = u.classic - u.ours;
    b.hessian_norm = norms[c];
    const std::string ch = "channel " + std::to_string(c) + ": ";
    if (b.u_classic < std::abs(b.t2_classic) - bound_tolerance(b.u_classic, b.t2_classic))
      rep.violations.push_back(ch + "|T2_classic| <= U_classic violated (T2 = " + std::to_string(b.t2_classic) +
                               ", U = " + std::to_string(b.u_classic) + ")");
    if (b.u_ours < std::abs(b.t2_ours) - bound_tolerance(b.u_ours, b.t2_ours))
      rep.violations.push_back(ch + "|T2_ours| <= U_ours violated (T2 = " + std::to_string(b.t2_ours) +
                               ", U = " + std::to_string(b.u_ours) + ")");
    if (b.jensen_margin < -kJensenTolerance)
      rep.violations.push_back(ch + "U_classic >= U_ours violated (margin " + std::to_string(b.jensen_margin) + ")");
    rep.channels.push_back(std::move(b));
  }
  if (strict && !rep.violations.empty()) throw VerificationError(rep.violations.front());
  return rep;
}

/// f(h) = 1/2 h^T A h + b^T h + c
struct QuadraticDecoder {
  Matrix<double> A;
  Vector<double> b;
  double c = 0;

  double operator()(const Vector<double>& h) const { return 0.5 * h.dot(A * h) + b.dot(h) + c; }
  Vector<double> gradient(const Vector<double>& h) const { return 0.5 * (A + A.transpose()) * h + b; }
  Matrix<double> hessian() const { return 0.5 * (A + A.transpose()); }
};

struct TaylorResiduals {
  double classic = 0;  // relative
  double ours = 0;
};

/// Order 0+1+2 expansion of both estimators against direct evaluation on an
/// exactly quadratic decoder. Classic: sum_i w_i f(h_* + dh_i). Ours:
/// (sum w) f(h_* + sum_i w_i dh_i / sum w), expanded with weights w / sum w
/// and scaled by sum w.
inline TaylorResiduals taylor_exactness_check(const QuadraticDecoder& f, const PerturbationSet& p) {
  p.validate();
  const double W = p.weight_sum();
  if (!(W > 0)) throw InputError("taylor_exactness_check: weights sum to zero");
  const Matrix<double> H = f.hessian();
  const Vector<double> g = f.gradient(p.anchor);
  const double f0 = f(p.anchor);
  const TaylorTerms t = taylor_terms(p, H);
  const Vector<double> m = p.weighted_deviation();

  double direct_classic = 0;
  for (std::size_t i = 0; i < p.deltas.size(); ++i)
    direct_classic += p.weights[static_cast<Eigen::Index>(i)] * f(p.anchor + p.deltas[i]);
  const double expand_classic = W * f0 + g.dot(m) + t.classic;

  const double direct_ours = W * f(p.anchor + m / W);
  // With normalized weights w/W the second-order term is T2_ours / W^2.
  const double expand_ours = W * (f0 + g.dot(m) / W + t.ours / (W * W));

  TaylorResiduals r;
  r.classic = std::abs(direct_classic - expand_classic) / std::max(1.0, std::abs(direct_classic));
  r.ours = std::abs(direct_ours - expand_ours) / std::max(1.0, std::abs(direct_ours));
  return r;
}

}  // namespace linerf
