#pragma once

// Experiment manifests: one JSON document describing the model, the
// training budget, the dataset and the output directory.
//
//   {
//     "preset": "grid",
//     "model": { ...FieldConfig overrides... },
//     "train": { "renderer": "linerf", "iterations": 3000, ... },
//     "data": { "path": "data/glossy", "downscale": 1 },
//     "out": "runs/glossy",
//     "precision": "float",
//     "threads": 1
//   }
//
// Relative paths resolve against the manifest's directory.

#include "linerf/field.hpp"
#include "linerf/train.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>

namespace linerf {

enum class Precision { f32, f64 };

struct RunConfig {
  FieldConfig model = preset_grid();
  TrainConfig train;
  std::filesystem::path data;
  int downscale = 1;
  std::filesystem::path out;
  Precision precision = Precision::f32;
  std::optional<std::size_t> threads;
  std::string compare_renderer = "linerf";  // second run of `compare`
  bool box_explicit = false;                // model box given in the manifest
};

namespace detail {

template <class T>
T get_checked(const nlohmann::json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type or missing");
  }
}

}  // namespace detail

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  if (!j.is_object()) throw ConfigError("train: expected an object");
  detail::reject_unknown(j,
                         {"renderer", "iterations", "batch_size", "samples_per_ray", "lr", "lr_decay",
                          "lr_decay_steps", "seed", "eval_interval", "chunk_size"},
                         "train");
  const std::string w = "train";
  if (j.contains("renderer")) c.renderer = RendererSpec::parse(detail::get_checked<std::string>(j, "renderer", w));
  if (j.contains("iterations")) c.iterations = detail::get_checked<int>(j, "iterations", w);
  if (j.contains("batch_size")) c.batch_size = detail::get_checked<int>(j, "batch_size", w);
  if (j.contains("samples_per_ray")) c.samples_per_ray = detail::get_checked<int>(j, "samples_per_ray", w);
  if (j.contains("lr")) c.lr_init = detail::get_checked<double>(j, "lr", w);
  if (j.contains("lr_decay")) c.lr_decay = detail::get_checked<double>(j, "lr_decay", w);
  if (j.contains("lr_decay_steps")) c.lr_decay_steps = detail::get_checked<int>(j, "lr_decay_steps", w);
  if (j.contains("seed")) c.seed = detail::get_checked<std::uint64_t>(j, "seed", w);
  if (j.contains("eval_interval")) c.eval_interval = detail::get_checked<int>(j, "eval_interval", w);
  if (j.contains("chunk_size")) c.chunk_size = detail::get_checked<int>(j, "chunk_size", w);
  c.validate();
  return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"renderer", c.renderer.str()},         {"iterations", c.iterations},
          {"batch_size", c.batch_size},           {"samples_per_ray", c.samples_per_ray},
          {"lr", c.lr_init},                      {"lr_decay", c.lr_decay},
          {"lr_decay_steps", c.lr_decay_steps},   {"seed", c.seed},
          {"eval_interval", c.eval_interval},     {"chunk_size", c.chunk_size}};
}

/// Parses and validates a manifest. `base_dir` anchors relative paths.
/// With `require_data` the dataset directory must exist.
inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir,
                                      bool require_data = true) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  detail::reject_unknown(j, {"preset", "model", "train", "data", "out", "precision", "threads", "compare"}, "config");
  RunConfig rc;
  nlohmann::json model = j.contains("model") ? j["model"] : nlohmann::json::object();
  if (!model.is_object()) throw ConfigError("config.model: expected an object");
  if (j.contains("preset")) {
    if (model.contains("preset")) throw ConfigError("config: preset given both at top level and in model");
    model["preset"] = detail::get_checked<std::string>(j, "preset", "config");
  }
  rc.model = field_config_from_json(model, preset_grid());
  if (model.contains("position") && model["position"].is_object())
    rc.box_explicit = model["position"].contains("box_min") || model["position"].contains("box_max");
  if (j.contains("train")) rc.train = train_config_from_json(j["train"]);

  auto resolve = [&](const std::string& p) {
    std::filesystem::path q(p);
    return q.is_absolute() ? q : base_dir / q;
  };
  if (!j.contains("data")) throw ConfigError("config.data: missing");
  const auto& d = j["data"];
  if (d.is_string()) {
    rc.data = resolve(d.get<std::string>());
  } else if (d.is_object()) {
    detail::reject_unknown(d, {"path", "downscale"}, "config.data");
    rc.data = resolve(detail::get_checked<std::string>(d, "path", "config.data"));
    if (d.contains("downscale")) rc.downscale = detail::get_checked<int>(d, "downscale", "config.data");
  } else {
    throw ConfigError("config.data: expected a path or an object");
  }
  if (rc.downscale < 1) throw ConfigError("config.data.downscale: must be >= 1");
  if (!j.contains("out")) throw ConfigError("config.out: missing");
  rc.out = resolve(detail::get_checked<std::string>(j, "out", "config"));
  if (j.contains("precision")) {
    const auto p = detail::get_checked<std::string>(j, "precision", "config");
    if (p == "float" || p == "f32") rc.precision = Precision::f32;
    else if (p == "double" || p == "f64") rc.precision = Precision::f64;
    else throw ConfigError("config.precision: expected float|double, got '" + p + "'");
  }
  if (j.contains("threads")) {
    const int t = detail::get_checked<int>(j, "threads", "config");
    if (t < 1) throw ConfigError("config.threads: must be >= 1");
    rc.threads = static_cast<std::size_t>(t);
  }
  if (j.contains("compare")) {
    const auto& c = j["compare"];
    if (!c.is_object()) throw ConfigError("config.compare: expected an object");
    detail::reject_unknown(c, {"renderer"}, "config.compare");
    if (c.contains("renderer")) {
      rc.compare_renderer = detail::get_checked<std::string>(c, "renderer", "config.compare");
      if (RendererSpec::parse(rc.compare_renderer).kind == RendererKind::classic)
        throw ConfigError("config.compare.renderer: must integrate features (linerf or split:<k>)");
    }
  }
  if (rc.train.renderer.kind == RendererKind::split &&
      (rc.train.renderer.split < 0 || rc.train.renderer.split > rc.model.trunk_depth))
    throw ConfigError("config.train.renderer: split index outside [0, " + std::to_string(rc.model.trunk_depth) + "]");

  if (require_data) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(rc.data)) throw ConfigError("config.data: not a directory: " + rc.data.string());
    for (const char* f : {"transforms_train.json", "transforms_test.json"})
      if (!fs::exists(rc.data / f)) throw ConfigError("config.data: missing " + (rc.data / f).string());
  }
  if (std::filesystem::exists(rc.out) && !std::filesystem::is_directory(rc.out))
    throw ConfigError("config.out: exists and is not a directory: " + rc.out.string());
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& file, bool require_data = true) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_bytes(file.string()));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  } catch (const IngestionError& e) {
    throw ConfigError(e.what());
  }
  return run_config_from_json(j, file.parent_path(), require_data);
}

}  // namespace linerf
