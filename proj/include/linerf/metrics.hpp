#pragma once

// Image quality metrics over linear RGB.

#include "linerf/common.hpp"
#include "linerf/image.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace linerf {

inline constexpr double kPsnrCap = 99.0;

inline double mse(const Image& a, const Image& b) {
  if (!a.same_size(b)) throw InputError("mse: image dimensions differ");
  if (a.pixels.empty()) throw InputError("mse: empty image");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = a.pixels[i] - b.pixels[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.pixels.size());
}

/// 10 log10(1 / MSE), capped at 99 dB. The cap is applied as a min so the
/// result stays monotone in MSE (MSE < 1e-10 lands on the cap either way).
inline double psnr_from_mse(double m) {
  if (!(m >= 0)) throw InputError("psnr: MSE must be >= 0");
  if (m < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(m));
}

inline double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b)); }

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 1.0;
};

/// Rec.709 luma of a linear image, row-major.
inline std::vector<double> luma(const Image& img) {
  std::vector<double> y(img.pixel_count());
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] = 0.2126 * img.pixels[3 * i] + 0.7152 * img.pixels[3 * i + 1] + 0.0722 * img.pixels[3 * i + 2];
  return y;
}

/// Mean SSIM over all fully contained windows of the luma channel, using a
/// normalized Gaussian window.
inline double ssim(const Image& a, const Image& b, const SsimParams& p = {}) {
  if (!a.same_size(b)) throw InputError("ssim: image dimensions differ");
  if (a.width < p.window || a.height < p.window)
    throw InputError("ssim: image smaller than the " + std::to_string(p.window) + "x" + std::to_string(p.window) + " window");
  const int k = p.window;
  std::vector<double> g(static_cast<std::size_t>(k));
  double gsum = 0.0;
  for (int i = 0; i < k; ++i) {
    const double x = i - (k - 1) / 2.0;
    g[i] = std::exp(-x * x / (2.0 * p.sigma * p.sigma));
    gsum += g[i];
  }
  for (double& v : g) v /= gsum;

  const std::vector<double> ya = luma(a), yb = luma(b);
  const int w = a.width, h = a.height;
  const double c1 = (p.k1 * p.range) * (p.k1 * p.range);
  const double c2 = (p.k2 * p.range) * (p.k2 * p.range);
  double total = 0.0;
  long count = 0;
  for (int y0 = 0; y0 + k <= h; ++y0)
    for (int x0 = 0; x0 + k <= w; ++x0) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int j = 0; j < k; ++j)
        for (int i = 0; i < k; ++i) {
          const double wt = g[j] * g[i];
          const std::size_t idx = static_cast<std::size_t>(y0 + j) * w + (x0 + i);
          const double va = ya[idx], vb = yb[idx];
          ma += wt * va;
          mb += wt * vb;
          saa += wt * va * va;
          sbb += wt * vb * vb;
          sab += wt * va * vb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

}  // namespace linerf
