#pragma once

// Posed-image datasets in the transforms.json layout:
//   transforms_{train,test}.json = {camera_angle_x, frames: [{file_path,
//   transform_matrix}]} plus PPM frames. Generator metadata lives under an
// optional "linerf" key so external Blender-style datasets load unchanged.

#include "linerf/common.hpp"
#include "linerf/geometry.hpp"
#include "linerf/image.hpp"
#include "linerf/parallel.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace linerf {

struct DatasetMeta {
  std::string scene;
  std::uint64_t seed = 0;
  int resolution = 0;
  Vec3d background = Vec3d::Ones();
  double camera_angle_x = 0.0;
  std::optional<Aabb> bounds;
};

struct View {
  Camera camera;
  Image image;
  std::string file;
};

struct Dataset {
  std::string split;
  std::vector<View> views;
  DatasetMeta meta;

  bool empty() const { return views.empty(); }
  std::size_t pixel_count() const {
    std::size_t n = 0;
    for (const auto& v : views) n += v.image.pixel_count();
    return n;
  }
};

struct DatasetSplits {
  Dataset train;
  Dataset test;
};

inline double focal_from_angle(int width, double camera_angle_x) {
  return 0.5 * width / std::tan(0.5 * camera_angle_x);
}

namespace detail {

inline nlohmann::json meta_to_json(const DatasetMeta& m) {
  nlohmann::json j{{"scene", m.scene},
                   {"seed", m.seed},
                   {"resolution", m.resolution},
                   {"background", {m.background.x(), m.background.y(), m.background.z()}}};
  if (m.bounds)
    j["bounds"] = {{"min", {m.bounds->min.x(), m.bounds->min.y(), m.bounds->min.z()}},
                   {"max", {m.bounds->max.x(), m.bounds->max.y(), m.bounds->max.z()}}};
  return j;
}

inline Vec3d vec3_of(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace detail

/// Writes transforms_<split>.json and the frames below `dir`. Frame files are
/// named <split>/r_<index>.ppm.
inline void write_split(const std::filesystem::path& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / ds.split, ec);
  if (ec) throw DatasetError("cannot create " + (dir / ds.split).string() + ": " + ec.message());
  nlohmann::json frames = nlohmann::json::array();
  for (const View& v : ds.views) {
    nlohmann::json m = nlohmann::json::array();
    for (int r = 0; r < 4; ++r) m.push_back({v.camera.pose(r, 0), v.camera.pose(r, 1), v.camera.pose(r, 2), v.camera.pose(r, 3)});
    frames.push_back({{"file_path", v.file}, {"transform_matrix", m}});
    const fs::path p = dir / v.file;
    try {
      write_image(p.string(), v.image);
    } catch (const Error& e) {
      throw DatasetError(e.what());
    }
  }
  nlohmann::json root{{"camera_angle_x", ds.meta.camera_angle_x}, {"frames", frames}, {"linerf", detail::meta_to_json(ds.meta)}};
  const fs::path jp = dir / ("transforms_" + ds.split + ".json");
  std::ofstream os(jp, std::ios::binary);
  if (!os) throw DatasetError("cannot write " + jp.string());
  os << root.dump(2) << '\n';
  if (!os) throw DatasetError("failed writing " + jp.string());
}

/// Loads one split. Frames are decoded to linear RGB and box-downsampled.
inline Dataset load_split(const std::filesystem::path& dir, const std::string& split, int downscale_factor = 1,
                          std::size_t threads = 0) {
  namespace fs = std::filesystem;
  if (downscale_factor < 1) throw InputError("downscale must be a positive integer");
  const fs::path jp = dir / ("transforms_" + split + ".json");
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(read_file_bytes(jp.string()));
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(jp.string(), e.what());
  }
  Dataset ds;
  ds.split = split;
  try {
    ds.meta.camera_angle_x = root.at("camera_angle_x").get<double>();
    if (root.contains("linerf")) {
      const auto& m = root["linerf"];
      ds.meta.scene = m.value("scene", "");
      ds.meta.seed = m.value("seed", std::uint64_t{0});
      ds.meta.resolution = m.value("resolution", 0);
      if (m.contains("background")) ds.meta.background = detail::vec3_of(m["background"]);
      if (m.contains("bounds")) ds.meta.bounds = Aabb{detail::vec3_of(m["bounds"]["min"]), detail::vec3_of(m["bounds"]["max"])};
    }
    for (const auto& fr : root.at("frames")) {
      View v;
      v.file = fr.at("file_path").get<std::string>();
      const auto& m = fr.at("transform_matrix");
      if (m.size() != 4) throw IngestionError(jp.string(), "transform_matrix must be 4x4");
      for (int r = 0; r < 4; ++r) {
        if (m[r].size() != 4) throw IngestionError(jp.string(), "transform_matrix must be 4x4");
        for (int c = 0; c < 4; ++c) v.camera.pose(r, c) = m[r][c].get<double>();
      }
      ds.views.push_back(std::move(v));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(jp.string(), e.what());
  }
  if (ds.views.empty()) throw IngestionError(jp.string(), "no frames");

  parallel_for(ds.views.size(), resolve_thread_count(threads ? std::optional<std::size_t>(threads) : std::nullopt),
               [&](std::size_t i) {
                 View& v = ds.views[i];
                 fs::path p = dir / v.file;
                 if (!p.has_extension() && !fs::exists(p)) p += ".ppm";
                 if (!fs::exists(p)) throw IngestionError(p.string(), "missing frame");
                 Image img;
                 try {
                   img = read_image(p.string());
                 } catch (const FormatError& e) {
                   throw IngestionError(p.string(), e.what());
                 }
                 v.image = downscale(img, downscale_factor);
               });
  const int w = ds.views.front().image.width;
  const int h = ds.views.front().image.height;
  for (View& v : ds.views) {
    if (v.image.width != w || v.image.height != h)
      throw ValidationError(jp.string() + ": frames have mixed resolutions");
    v.camera.width = w;
    v.camera.height = h;
    v.camera.focal = focal_from_angle(w, ds.meta.camera_angle_x);
    try {
      v.camera.validate();
    } catch (const ValidationError& e) {
      throw ValidationError(jp.string() + " (" + v.file + "): " + e.what());
    }
  }
  return ds;
}

inline DatasetSplits load_dataset(const std::filesystem::path& dir, int downscale_factor = 1, std::size_t threads = 0) {
  DatasetSplits out;
  out.train = load_split(dir, "train", downscale_factor, threads);
  out.test = load_split(dir, "test", downscale_factor, threads);
  return out;
}

}  // namespace linerf
