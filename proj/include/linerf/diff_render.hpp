#pragma once

// Differentiable rendering of a chunk of rays through a FieldModel. The
// forward pass mirrors render_classic / render_linerf / render_split in
// render.hpp but keeps every intermediate so that backward_chunk can
// produce exact parameter gradients.

#include "linerf/field.hpp"
#include "linerf/render.hpp"

#include <span>
#include <vector>

namespace linerf {

/// Gradient container with the same block layout as FieldModel::blocks().
template <class Scalar>
struct FieldGrads {
  Net<Scalar> trunk;
  Net<Scalar> density_head;
  Net<Scalar> color_head;
  Vector<Scalar> grid_table;
  Matrix<Scalar> bg_coeffs;

  static FieldGrads zeros_like(const FieldModel<Scalar>& m) {
    FieldGrads g;
    g.trunk = linerf::zeros_like(m.trunk);
    g.density_head = linerf::zeros_like(m.density_head);
    g.color_head = linerf::zeros_like(m.color_head);
    g.grid_table = Vector<Scalar>::Zero(m.grid_table.size());
    g.bg_coeffs = Matrix<Scalar>::Zero(m.bg_coeffs.rows(), m.bg_coeffs.cols());
    return g;
  }

  void set_zero() {
    trunk.set_zero();
    density_head.set_zero();
    color_head.set_zero();
    grid_table.setZero();
    bg_coeffs.setZero();
  }

  FieldGrads& operator+=(const FieldGrads& o) {
    trunk += o.trunk;
    density_head += o.density_head;
    color_head += o.color_head;
    grid_table += o.grid_table;
    bg_coeffs += o.bg_coeffs;
    return *this;
  }

  std::vector<std::span<const Scalar>> blocks() const {
    std::vector<std::span<const Scalar>> out;
    for (const Net<Scalar>* n : {&trunk, &density_head, &color_head})
      for (auto b : n->blocks()) out.push_back(b);
    if (grid_table.size() > 0) out.emplace_back(grid_table.data(), static_cast<std::size_t>(grid_table.size()));
    if (bg_coeffs.size() > 0) out.emplace_back(bg_coeffs.data(), static_cast<std::size_t>(bg_coeffs.size()));
    return out;
  }
};

template <class Scalar>
struct ChunkForward {
  RendererSpec spec;
  int split = 0;  // integration point for linerf/split
  std::vector<Vec3<Scalar>> dirs;
  std::vector<const std::vector<double>*> deltas;
  std::vector<Eigen::Index> offsets;  // R + 1 sample offsets
  Matrix3X<Scalar> xs;
  ForwardTape<Scalar> trunk_tape;
  ForwardTape<Scalar> density_tape;
  std::vector<RenderWeights<Scalar>> weights;
  Matrix<Scalar> bg;        // 3 x R
  Matrix<Scalar> bg_basis;  // SH basis per ray (learned background only)
  Matrix<Scalar> dir_enc;   // direction encodings, one column per ray
  ForwardTape<Scalar> color_tape;
  std::vector<Eigen::Index> fg;  // integrating renderers: rays with foreground mass
  Matrix<Scalar> bar;            // integrated split activations, one column per fg ray
  Matrix<Scalar> enc_bar;        // integrated encodings (only when re-read after the split)
  ForwardTape<Scalar> finish_tape;
  Matrix<Scalar> rgb;            // 3 x R

  Eigen::Index ray_count() const { return static_cast<Eigen::Index>(dirs.size()); }
  const Matrix<Scalar>& encoding() const { return trunk_tape.inputs.front(); }
  const Matrix<Scalar>& split_activation() const {
    return split == 0 ? trunk_tape.inputs.front() : trunk_tape.post[static_cast<std::size_t>(split - 1)];
  }
};

template <class Scalar>
ChunkForward<Scalar> forward_chunk(const FieldModel<Scalar>& model, std::span<const Ray> rays,
                                   std::span<const SampleBatch> samples, const RendererSpec& spec) {
  using S = Scalar;
  if (rays.size() != samples.size()) throw InputError("forward_chunk: rays and samples differ in count");
  ChunkForward<S> f;
  f.spec = spec;
  const int depth = model.trunk_depth();
  f.split = spec.kind == RendererKind::split ? spec.split : depth;
  if (f.split < 0 || f.split > depth) throw ConfigError("forward_chunk: split index out of range");
  const auto R = static_cast<Eigen::Index>(rays.size());
  f.offsets.assign(static_cast<std::size_t>(R) + 1, 0);
  for (Eigen::Index r = 0; r < R; ++r)
    f.offsets[r + 1] = f.offsets[r] + static_cast<Eigen::Index>(samples[r].size());
  const Eigen::Index total = f.offsets.back();

  f.xs.resize(3, total);
  f.dir_enc.resize(model.direction_dim(), R);
  f.bg.resize(3, R);
  const bool sh_bg = model.cfg.background.kind == BackgroundKind::spherical_harmonics;
  if (sh_bg) f.bg_basis.resize(model.bg_coeffs.cols(), R);
  for (Eigen::Index r = 0; r < R; ++r) {
    const Ray& ray = rays[r];
    const SampleBatch& s = samples[r];
    for (std::size_t i = 0; i < s.size(); ++i)
      f.xs.col(f.offsets[r] + static_cast<Eigen::Index>(i)) = ray.at(s.t[i]).cast<S>();
    const Vec3<S> d = ray.direction.cast<S>();
    f.dirs.push_back(d);
    f.deltas.push_back(&s.delta);
    f.dir_enc.col(r) = model.encode_direction(d);
    f.bg.col(r) = model.background(d);
    if (sh_bg) spherical_harmonics(d, model.cfg.background.sh_degree, f.bg_basis.col(r).data());
  }

  const Matrix<S> enc = model.encode_positions(f.xs);
  forward(model.trunk, enc, &f.trunk_tape);
  const Matrix<S>& h = f.trunk_tape.output();
  const Matrix<S> sigma = forward(model.density_head, h, &f.density_tape);

  f.weights.reserve(static_cast<std::size_t>(R));
  for (Eigen::Index r = 0; r < R; ++r) {
    const Eigen::Index n = f.offsets[r + 1] - f.offsets[r];
    const Vector<S> sig = sigma.row(0).segment(f.offsets[r], n).transpose();
    f.weights.push_back(compute_weights<S>(sig, samples[r].delta));
  }

  f.rgb.resize(3, R);
  const int F = model.feature_dim();
  if (spec.kind == RendererKind::classic) {
    Matrix<S> in(F + model.direction_dim(), total);
    in.topRows(F) = h;
    for (Eigen::Index r = 0; r < R; ++r) {
      const Eigen::Index n = f.offsets[r + 1] - f.offsets[r];
      in.bottomRows(model.direction_dim()).middleCols(f.offsets[r], n) = f.dir_enc.col(r).replicate(1, n);
    }
    const Matrix<S> c = forward(model.color_head, in, &f.color_tape);
    for (Eigen::Index r = 0; r < R; ++r) {
      const auto& w = f.weights[static_cast<std::size_t>(r)];
      const Eigen::Index n = f.offsets[r + 1] - f.offsets[r];
      Vec3<S> out = c.middleCols(f.offsets[r], n) * w.weights;
      out += (S(1) - w.fg_mass) * f.bg.col(r);
      f.rgb.col(r) = out;
    }
    return f;
  }

  const Matrix<S>& a = f.split_activation();
  const bool need_enc = model.split_needs_encoding(f.split);
  for (Eigen::Index r = 0; r < R; ++r)
    if (f.weights[static_cast<std::size_t>(r)].fg_mass > S(kForegroundEpsilon)) f.fg.push_back(r);
  const auto nfg = static_cast<Eigen::Index>(f.fg.size());
  f.bar.resize(a.rows(), nfg);
  if (need_enc) f.enc_bar.resize(f.encoding().rows(), nfg);
  for (Eigen::Index j = 0; j < nfg; ++j) {
    const Eigen::Index r = f.fg[static_cast<std::size_t>(j)];
    const auto& w = f.weights[static_cast<std::size_t>(r)];
    const Eigen::Index n = f.offsets[r + 1] - f.offsets[r];
    f.bar.col(j) = (a.middleCols(f.offsets[r], n) * w.weights) / w.fg_mass;
    if (need_enc) f.enc_bar.col(j) = (f.encoding().middleCols(f.offsets[r], n) * w.weights) / w.fg_mass;
  }
  Matrix<S> hfin;
  if (f.split < depth)
    hfin = forward_range(model.trunk, f.bar, f.split == 0 ? f.bar : f.enc_bar, f.split, depth, &f.finish_tape);
  else
    hfin = f.bar;
  Matrix<S> in(F + model.direction_dim(), nfg);
  in.topRows(F) = hfin;
  for (Eigen::Index j = 0; j < nfg; ++j)
    in.bottomRows(model.direction_dim()).col(j) = f.dir_enc.col(f.fg[static_cast<std::size_t>(j)]);
  const Matrix<S> c = forward(model.color_head, in, &f.color_tape);
  f.rgb = f.bg;
  for (Eigen::Index j = 0; j < nfg; ++j) {
    const Eigen::Index r = f.fg[static_cast<std::size_t>(j)];
    const S mass = f.weights[static_cast<std::size_t>(r)].fg_mass;
    f.rgb.col(r) = mass * c.col(j) + (S(1) - mass) * f.bg.col(r);
  }
  return f;
}

/// Accumulates into `grads` the gradient of sum_r <rgb_r, grad_rgb_r>.
template <class Scalar>
void backward_chunk(const FieldModel<Scalar>& model, const ChunkForward<Scalar>& f,
                    const Matrix<Scalar>& grad_rgb, FieldGrads<Scalar>& grads) {
  using S = Scalar;
  const Eigen::Index R = f.ray_count();
  if (grad_rgb.rows() != 3 || grad_rgb.cols() != R) throw InputError("backward_chunk: gradient shape mismatch");
  const Eigen::Index total = f.offsets.back();
  const int F = model.feature_dim();
  const int depth = model.trunk_depth();

  Matrix<S> dh = Matrix<S>::Zero(F, total);
  Matrix<S> dbg = Matrix<S>::Zero(3, R);
  Vector<S> dweights = Vector<S>::Zero(total);
  Matrix<S> da;          // gradient injected at the split activation
  Matrix<S> denc_extra;  // gradient reaching the encoding through enc_bar

  if (f.spec.kind == RendererKind::classic) {
    const Matrix<S>& c = f.color_tape.output();
    Matrix<S> dc(3, total);
    for (Eigen::Index r = 0; r < R; ++r) {
      const auto& w = f.weights[static_cast<std::size_t>(r)];
      const Eigen::Index o = f.offsets[r], n = f.offsets[r + 1] - o;
      const Vec3<S> g = grad_rgb.col(r);
      dc.middleCols(o, n) = g * w.weights.transpose();
      dweights.segment(o, n) = ((c.middleCols(o, n).colwise() - f.bg.col(r)).transpose() * g);
      dbg.col(r) = (S(1) - w.fg_mass) * g;
    }
    Matrix<S> din;
    backward(model.color_head, f.color_tape, dc, grads.color_head, &din);
    dh += din.topRows(F);
  } else {
    const Matrix<S>& c = f.color_tape.output();
    const auto nfg = static_cast<Eigen::Index>(f.fg.size());
    Matrix<S> dc(3, nfg);
    Vector<S> dmass(nfg);
    dbg = grad_rgb;
    for (Eigen::Index j = 0; j < nfg; ++j) {
      const Eigen::Index r = f.fg[static_cast<std::size_t>(j)];
      const S mass = f.weights[static_cast<std::size_t>(r)].fg_mass;
      const Vec3<S> g = grad_rgb.col(r);
      dc.col(j) = mass * g;
      dmass[j] = g.dot(c.col(j) - f.bg.col(r));
      dbg.col(r) = (S(1) - mass) * g;
    }
    Matrix<S> din;
    backward(model.color_head, f.color_tape, dc, grads.color_head, &din);
    Matrix<S> dbar = din.topRows(F);
    Matrix<S> denc_bar;
    if (f.split < depth) {
      Matrix<S> dstart, dorig;
      backward(model.trunk, f.finish_tape, dbar, grads.trunk, &dstart, &dorig);
      dbar = std::move(dstart);
      if (dorig.size() > 0) {
        if (f.split == 0) dbar += dorig;
        else denc_bar = std::move(dorig);
      }
    }
    const Matrix<S>& a = f.split_activation();
    const Matrix<S>& enc = f.encoding();
    da = Matrix<S>::Zero(a.rows(), total);
    if (denc_bar.size() > 0) denc_extra = Matrix<S>::Zero(enc.rows(), total);
    for (Eigen::Index j = 0; j < nfg; ++j) {
      const Eigen::Index r = f.fg[static_cast<std::size_t>(j)];
      const auto& w = f.weights[static_cast<std::size_t>(r)];
      const Eigen::Index o = f.offsets[r], n = f.offsets[r + 1] - o;
      const S inv = S(1) / w.fg_mass;
      // d bar / d w_i = (a_i - bar) / W ; d bar / d a_i = w_i / W
      Vector<S> dw = ((a.middleCols(o, n).colwise() - f.bar.col(j)).transpose() * dbar.col(j)) * inv;
      dw.array() += dmass[j];
      da.middleCols(o, n) = dbar.col(j) * (w.weights.transpose() * inv);
      if (denc_bar.size() > 0) {
        dw += ((enc.middleCols(o, n).colwise() - f.enc_bar.col(j)).transpose() * denc_bar.col(j)) * inv;
        denc_extra.middleCols(o, n) = denc_bar.col(j) * (w.weights.transpose() * inv);
      }
      dweights.segment(o, n) = dw;
    }
  }

  Matrix<S> dsigma(1, total);
  for (Eigen::Index r = 0; r < R; ++r) {
    const Eigen::Index o = f.offsets[r], n = f.offsets[r + 1] - o;
    if (n == 0) continue;
    dsigma.row(0).segment(o, n) =
        weights_backward<S>(f.weights[static_cast<std::size_t>(r)], *f.deltas[static_cast<std::size_t>(r)],
                            dweights.segment(o, n))
            .transpose();
  }
  Matrix<S> dh_density;
  backward(model.density_head, f.density_tape, dsigma, grads.density_head, &dh_density);
  dh += dh_density;

  Matrix<S> denc, denc_orig;
  if (da.size() > 0)
    backward(model.trunk, f.trunk_tape, dh, grads.trunk, &denc, &denc_orig, &da, f.split);
  else
    backward(model.trunk, f.trunk_tape, dh, grads.trunk, &denc, &denc_orig);
  if (denc_orig.size() > 0) denc += denc_orig;
  if (denc_extra.size() > 0) denc += denc_extra;
  model.encode_positions_backward(f.xs, denc, grads.grid_table);

  if (model.cfg.background.kind == BackgroundKind::spherical_harmonics) {
    const Matrix<S> dz = (dbg.array() * f.bg.array() * (S(1) - f.bg.array())).matrix();
    grads.bg_coeffs += dz * f.bg_basis.transpose();
  }
}

}  // namespace linerf
