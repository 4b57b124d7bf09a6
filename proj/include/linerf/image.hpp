#pragma once

// Linear-RGB images and binary PPM (P6) I/O. Pixels are kept in linear
// space; the sRGB transfer is applied only when bytes hit disk.

#include "linerf/common.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace linerf {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // row-major, interleaved rgb

  Image() = default;
  Image(int w, int h, const Vec3d& fill = Vec3d::Zero()) : width(w), height(h) {
    if (w < 1 || h < 1) throw InputError("image: zero resolution");
    pixels.resize(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = fill[static_cast<int>(i % 3)];
  }

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

  double& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  Vec3d rgb(int x, int y) const { return {at(x, y, 0), at(x, y, 1), at(x, y, 2)}; }
  void set(int x, int y, const Vec3d& v) {
    for (int c = 0; c < 3; ++c) at(x, y, c) = v[c];
  }

  bool same_size(const Image& o) const { return width == o.width && height == o.height; }
};

inline double linear_to_srgb(double l) {
  l = std::clamp(l, 0.0, 1.0);
  return l <= 0.0031308 ? 12.92 * l : 1.055 * std::pow(l, 1.0 / 2.4) - 0.055;
}

inline double srgb_to_linear(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s <= 0.04045 ? s / 12.92 : std::pow((s + 0.055) / 1.055, 2.4);
}

inline std::uint8_t linear_to_byte(double l) {
  return static_cast<std::uint8_t>(std::lround(linear_to_srgb(l) * 255.0));
}

inline double byte_to_linear(std::uint8_t b) { return srgb_to_linear(b / 255.0); }

/// "P6\n<w> <h>\n255\n" followed by interleaved sRGB bytes.
inline std::string encode_ppm(const Image& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.pixels.size());
  for (double v : img.pixels) out.push_back(static_cast<char>(linear_to_byte(v)));
  return out;
}

inline Image decode_ppm(const std::string& bytes, const std::string& name = "<memory>") {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> long {
    skip_space();
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos == start || pos - start > 9) throw FormatError(name + ": malformed PPM header");
    return std::stol(bytes.substr(start, pos - start));
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw FormatError(name + ": not a P6 file");
  pos = 2;
  const long w = read_int();
  const long h = read_int();
  const long maxval = read_int();
  if (w < 1 || h < 1) throw FormatError(name + ": zero-sized PPM");
  if (maxval != 255) throw FormatError(name + ": only maxval 255 is supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw FormatError(name + ": malformed PPM header");
  ++pos;
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
  if (bytes.size() - pos < need) throw FormatError(name + ": truncated pixel data");
  Image img(static_cast<int>(w), static_cast<int>(h));
  for (std::size_t i = 0; i < need; ++i) img.pixels[i] = byte_to_linear(static_cast<std::uint8_t>(bytes[pos + i]));
  return img;
}

inline void write_image(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  const std::string bytes = encode_ppm(img);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw FormatError("failed writing " + path);
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError(path, "cannot open file");
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

inline Image read_image(const std::string& path) { return decode_ppm(read_file_bytes(path), path); }

/// Box filter by an integer factor, averaging in linear space. Trailing
/// rows/columns that do not fill a whole block are dropped.
inline Image downscale(const Image& img, int factor) {
  if (factor < 1) throw InputError("downscale factor must be >= 1");
  if (factor == 1) return img;
  const int w = img.width / factor;
  const int h = img.height / factor;
  if (w < 1 || h < 1) throw InputError("downscale factor larger than the image");
  Image out(w, h);
  const double inv = 1.0 / (factor * factor);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) s += img.at(x * factor + dx, y * factor + dy, c);
        out.at(x, y, c) = s * inv;
      }
  return out;
}

}  // namespace linerf
