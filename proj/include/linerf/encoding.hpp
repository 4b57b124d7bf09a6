#pragma once

// Positional and directional input encoders.

#include "linerf/common.hpp"
#include "linerf/geometry.hpp"

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

namespace linerf {

enum class PositionalKind { sinusoidal, dense_grid };
enum class DirectionalKind { sinusoidal, spherical_harmonics };

struct PositionalEncoderCfg {
  PositionalKind kind = PositionalKind::sinusoidal;
  // sinusoidal
  int num_frequencies = 10;
  bool include_raw_input = true;
  // dense_grid
  int num_levels = 8;
  int base_resolution = 16;
  double per_level_scale = 1.5;
  int features_per_level = 2;
  Aabb box;

  /// Cells per axis for each grid level.
  std::vector<int> level_resolutions() const {
    std::vector<int> res;
    for (int l = 0; l < num_levels; ++l)
      res.push_back(static_cast<int>(std::floor(base_resolution * std::pow(per_level_scale, l))));
    return res;
  }

  void validate() const {
    if (kind == PositionalKind::sinusoidal) {
      if (num_frequencies < 1) throw ConfigError("positional encoder: num_frequencies must be >= 1");
      return;
    }
    if (num_levels < 1 || base_resolution < 1 || features_per_level < 1)
      throw ConfigError("dense grid: levels, base resolution and features must be >= 1");
    const auto res = level_resolutions();
    for (std::size_t l = 1; l < res.size(); ++l)
      if (res[l] <= res[l - 1])
        throw ConfigError("dense grid: level resolutions must be strictly increasing");
    if (!box.valid()) throw ConfigError("dense grid: bounding box must have positive extent");
  }

  int output_dim() const {
    if (kind == PositionalKind::sinusoidal) return (include_raw_input ? 3 : 0) + 6 * num_frequencies;
    return num_levels * features_per_level;
  }
};

struct DirectionalEncoderCfg {
  DirectionalKind kind = DirectionalKind::spherical_harmonics;
  int num_frequencies = 4;
  bool include_raw_input = true;
  int degree = 4;

  void validate() const {
    if (kind == DirectionalKind::spherical_harmonics && (degree < 0 || degree > 4))
      throw ConfigError("SH degree must be in [0, 4]");
    if (kind == DirectionalKind::sinusoidal && num_frequencies < 1)
      throw ConfigError("directional encoder: num_frequencies must be >= 1");
  }

  int output_dim() const {
    if (kind == DirectionalKind::spherical_harmonics) return (degree + 1) * (degree + 1);
    return (include_raw_input ? 3 : 0) + 6 * num_frequencies;
  }
};

/// Raw input (optional) followed by sin then cos blocks for each octave:
/// [x, sin(pi x), cos(pi x), sin(2 pi x), cos(2 pi x), ...], three components
/// per block.
template <class Scalar>
void sinusoidal_encode(const Vec3<Scalar>& x, int num_frequencies, bool include_raw, Scalar* out) {
  int o = 0;
  if (include_raw)
    for (int c = 0; c < 3; ++c) out[o++] = x[c];
  Scalar freq = static_cast<Scalar>(kPi);
  for (int k = 0; k < num_frequencies; ++k) {
    for (int c = 0; c < 3; ++c) out[o++] = std::sin(freq * x[c]);
    for (int c = 0; c < 3; ++c) out[o++] = std::cos(freq * x[c]);
    freq *= Scalar(2);
  }
}

/// Real spherical harmonics with Condon-Shortley phase, l ascending and
/// m = -l..l within each band. `out` must hold (degree+1)^2 values.
template <class Scalar>
void spherical_harmonics(const Vec3<Scalar>& d, int degree, Scalar* out) {
  const Scalar x = d.x(), y = d.y(), z = d.z();
  const Scalar x2 = x * x, y2 = y * y, z2 = z * z;
  out[0] = Scalar(0.28209479177387814);
  if (degree < 1) return;
  out[1] = Scalar(-0.48860251190291987) * y;
  out[2] = Scalar(0.48860251190291987) * z;
  out[3] = Scalar(-0.48860251190291987) * x;
  if (degree < 2) return;
  out[4] = Scalar(1.0925484305920792) * x * y;
  out[5] = Scalar(-1.0925484305920792) * y * z;
  out[6] = Scalar(0.94617469575755997) * z2 - Scalar(0.31539156525251999);
  out[7] = Scalar(-1.0925484305920792) * x * z;
  out[8] = Scalar(0.54627421529603959) * (x2 - y2);
  if (degree < 3) return;
  out[9] = Scalar(0.59004358992664352) * y * (Scalar(-3) * x2 + y2);
  out[10] = Scalar(2.8906114426405538) * x * y * z;
  out[11] = Scalar(0.45704579946446572) * y * (Scalar(1) - Scalar(5) * z2);
  out[12] = Scalar(0.3731763325901154) * z * (Scalar(5) * z2 - Scalar(3));
  out[13] = Scalar(0.45704579946446572) * x * (Scalar(1) - Scalar(5) * z2);
  out[14] = Scalar(1.4453057213202769) * z * (x2 - y2);
  out[15] = Scalar(0.59004358992664352) * x * (-x2 + Scalar(3) * y2);
  if (degree < 4) return;
  out[16] = Scalar(2.5033429417967046) * x * y * (x2 - y2);
  out[17] = Scalar(1.7701307697799304) * y * z * (Scalar(-3) * x2 + y2);
  out[18] = Scalar(0.94617469575756008) * x * y * (Scalar(7) * z2 - Scalar(1));
  out[19] = Scalar(0.66904654355728921) * y * z * (Scalar(3) - Scalar(7) * z2);
  out[20] = Scalar(-3.1735664074561294) * z2 + Scalar(3.7024941420321507) * z2 * z2 +
            Scalar(0.31735664074561293);
  out[21] = Scalar(0.66904654355728921) * x * z * (Scalar(3) - Scalar(7) * z2);
  out[22] = Scalar(0.47308734787878004) * (x2 - y2) * (Scalar(7) * z2 - Scalar(1));
  out[23] = Scalar(1.7701307697799304) * x * z * (-x2 + Scalar(3) * y2);
  out[24] = Scalar(-3.7550144126950569) * x2 * y2 + Scalar(0.62583573544917614) * x2 * x2 +
            Scalar(0.62583573544917614) * y2 * y2;
}

template <class Scalar>
Vector<Scalar> encode_direction(const DirectionalEncoderCfg& cfg, const Vec3<Scalar>& d) {
  if (std::abs(static_cast<double>(d.norm()) - 1.0) > 1e-6)
    throw InputError("encode_direction: direction is not unit length");
  Vector<Scalar> out(cfg.output_dim());
  if (cfg.kind == DirectionalKind::spherical_harmonics)
    spherical_harmonics(d, cfg.degree, out.data());
  else
    sinusoidal_encode(d, cfg.num_frequencies, cfg.include_raw_input, out.data());
  return out;
}

/// Multi-level dense grid of learned vertex features, trilinearly
/// interpolated. Level l has (res_l + 1)^3 vertices; features are stored
/// vertex-major within a level.
template <class Scalar>
class DenseGrid {
 public:
  DenseGrid() = default;
  explicit DenseGrid(const PositionalEncoderCfg& cfg) : cfg_(cfg) {
    cfg_.validate();
    res_ = cfg_.level_resolutions();
    std::size_t off = 0;
    for (int r : res_) {
      offsets_.push_back(off);
      const std::size_t v = static_cast<std::size_t>(r + 1);
      off += v * v * v * static_cast<std::size_t>(cfg_.features_per_level);
    }
    size_ = off;
  }

  std::size_t table_size() const { return size_; }
  const std::vector<int>& resolutions() const { return res_; }
  int output_dim() const { return cfg_.output_dim(); }

  /// Table index of feature 0 at vertex (ix, iy, iz) of `level`.
  std::size_t vertex_index(int level, int ix, int iy, int iz) const {
    const std::size_t v = static_cast<std::size_t>(res_[level] + 1);
    return offsets_[level] +
           ((static_cast<std::size_t>(iz) * v + static_cast<std::size_t>(iy)) * v +
            static_cast<std::size_t>(ix)) *
               static_cast<std::size_t>(cfg_.features_per_level);
  }

  /// Calls visit(level, corner_table_index, weight) for the 8 corners of every level.
  template <class Visitor>
  void corners(const Vec3<Scalar>& x, Visitor&& visit) const {
    const Vec3d p = cfg_.box.clamp(x.template cast<double>());
    const Vec3d u = (p - cfg_.box.min).cwiseQuotient(cfg_.box.extent());
    for (int l = 0; l < static_cast<int>(res_.size()); ++l) {
      const int r = res_[l];
      int i0[3];
      Scalar f[3];
      for (int a = 0; a < 3; ++a) {
        const double pos = u[a] * r;
        int c = static_cast<int>(std::floor(pos));
        c = std::min(std::max(c, 0), r - 1);
        i0[a] = c;
        f[a] = static_cast<Scalar>(pos - c);
      }
      for (int corner = 0; corner < 8; ++corner) {
        const int dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
        const Scalar w = (dx ? f[0] : Scalar(1) - f[0]) * (dy ? f[1] : Scalar(1) - f[1]) *
                         (dz ? f[2] : Scalar(1) - f[2]);
        visit(l, vertex_index(l, i0[0] + dx, i0[1] + dy, i0[2] + dz), w);
      }
    }
  }

  void encode(const Vector<Scalar>& table, const Vec3<Scalar>& x, Scalar* out) const {
    const int F = cfg_.features_per_level;
    for (int i = 0; i < output_dim(); ++i) out[i] = Scalar(0);
    corners(x, [&](int l, std::size_t idx, Scalar w) {
      for (int k = 0; k < F; ++k) out[l * F + k] += w * table[static_cast<Eigen::Index>(idx) + k];
    });
  }

  /// Scatters d(loss)/d(encoding) for position x into the table gradient.
  void backward(const Vec3<Scalar>& x, const Scalar* grad_out, Vector<Scalar>& table_grad) const {
    const int F = cfg_.features_per_level;
    corners(x, [&](int l, std::size_t idx, Scalar w) {
      for (int k = 0; k < F; ++k) table_grad[static_cast<Eigen::Index>(idx) + k] += w * grad_out[l * F + k];
    });
  }

 private:
  PositionalEncoderCfg cfg_;
  std::vector<int> res_;
  std::vector<std::size_t> offsets_;
  std::size_t size_ = 0;
};

}  // namespace linerf
