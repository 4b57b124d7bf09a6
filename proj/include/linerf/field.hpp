#pragma once

// Radiance-field networks: positional feature trunk h(x), density head
// f_sigma(h) and color decoder f_c(h, d), plus the h = h1 o h2 split.

#include "linerf/common.hpp"
#include "linerf/encoding.hpp"
#include "linerf/net.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace linerf {

enum class BackgroundKind { constant, spherical_harmonics };

struct BackgroundCfg {
  BackgroundKind kind = BackgroundKind::constant;
  Vec3d color = Vec3d::Ones();
  int sh_degree = 2;  // learned sigmoid(SH) background

  void validate() const {
    if (kind == BackgroundKind::constant &&
        ((color.array() < 0.0).any() || (color.array() > 1.0).any()))
      throw ConfigError("background: constant color must lie in [0,1]^3");
    if (kind == BackgroundKind::spherical_harmonics && (sh_degree < 0 || sh_degree > 4))
      throw ConfigError("background: SH degree must be in [0, 4]");
  }
};

struct FieldConfig {
  std::string preset = "mlp";
  PositionalEncoderCfg position;
  DirectionalEncoderCfg direction;
  int trunk_depth = 8;
  int trunk_width = 256;
  std::set<int> trunk_skips = {5};
  int feature_dim = 256;
  Activation feature_activation = Activation::relu;
  std::vector<int> density_hidden;
  double density_bias_init = -1.0;
  std::vector<int> color_hidden = {128};
  Activation color_output = Activation::sigmoid;
  int split_index = 8;
  BackgroundCfg background;

  void validate() const {
    position.validate();
    direction.validate();
    background.validate();
    if (trunk_depth < 1) throw ConfigError("trunk_depth must be >= 1");
    if (trunk_width < 1 || feature_dim < 1) throw ConfigError("trunk widths must be >= 1");
    for (int s : trunk_skips)
      if (s < 1 || s >= trunk_depth) throw ConfigError("trunk skip index out of range");
    if (split_index < 0 || split_index > trunk_depth)
      throw ConfigError("split_index must lie in [0, trunk_depth]");
  }
};

/// 8-layer width-256 trunk, skip into layer index 5, sinusoidal L = 10
/// positions (63 dims) and degree-4 SH directions. dim(h) = 256.
inline FieldConfig preset_mlp() {
  FieldConfig c;
  c.preset = "mlp";
  c.position.kind = PositionalKind::sinusoidal;
  c.position.num_frequencies = 10;
  c.position.include_raw_input = true;
  c.direction.kind = DirectionalKind::spherical_harmonics;
  c.direction.degree = 4;
  c.trunk_depth = 8;
  c.trunk_width = 256;
  c.trunk_skips = {5};
  c.feature_dim = 256;
  c.feature_activation = Activation::relu;
  c.color_hidden = {128};
  c.split_index = 8;
  return c;
}

/// Dense multi-level grid (8 levels, base 16, scale 1.5, 2 features/level)
/// feeding a 2-layer trunk. dim(h) = 15.
inline FieldConfig preset_grid() {
  FieldConfig c;
  c.preset = "grid";
  c.position.kind = PositionalKind::dense_grid;
  c.position.num_levels = 8;
  c.position.base_resolution = 16;
  c.position.per_level_scale = 1.5;
  c.position.features_per_level = 2;
  c.direction.kind = DirectionalKind::spherical_harmonics;
  c.direction.degree = 4;
  c.trunk_depth = 2;
  c.trunk_width = 64;
  c.trunk_skips = {};
  c.feature_dim = 15;
  c.feature_activation = Activation::identity;
  c.color_hidden = {64, 64};
  c.split_index = 2;
  return c;
}

template <class Scalar>
struct SplitFeatures {
  Matrix<Scalar> at_split;  // activation after `split` trunk layers
  Matrix<Scalar> encoding;  // positional encoding; set when layers past the split re-read it
  Matrix<Scalar> full;      // h(x)
};

template <class Scalar>
class FieldModel {
 public:
  using scalar_type = Scalar;

  FieldConfig cfg;
  Net<Scalar> trunk;
  Net<Scalar> density_head;
  Net<Scalar> color_head;
  Vector<Scalar> grid_table;  // empty unless the dense grid encoder is used
  Matrix<Scalar> bg_coeffs;   // 3 x (deg+1)^2, SH background only

  FieldModel() = default;

  /// Shapes only; every parameter zero.
  explicit FieldModel(const FieldConfig& config) : cfg(config) {
    cfg.validate();
    const int enc = cfg.position.output_dim();
    std::vector<std::pair<int, Activation>> widths;
    for (int i = 0; i + 1 < cfg.trunk_depth; ++i) widths.emplace_back(cfg.trunk_width, Activation::relu);
    widths.emplace_back(cfg.feature_dim, cfg.feature_activation);
    trunk = Net<Scalar>(enc, widths, cfg.trunk_skips);

    std::vector<std::pair<int, Activation>> dw;
    for (int w : cfg.density_hidden) dw.emplace_back(w, Activation::relu);
    dw.emplace_back(1, Activation::softplus);
    density_head = Net<Scalar>(cfg.feature_dim, dw);

    std::vector<std::pair<int, Activation>> cw;
    for (int w : cfg.color_hidden) cw.emplace_back(w, Activation::relu);
    cw.emplace_back(3, cfg.color_output);
    color_head = Net<Scalar>(cfg.feature_dim + cfg.direction.output_dim(), cw);

    if (cfg.position.kind == PositionalKind::dense_grid) {
      grid_ = DenseGrid<Scalar>(cfg.position);
      grid_table = Vector<Scalar>::Zero(static_cast<Eigen::Index>(grid_.table_size()));
    }
    if (cfg.background.kind == BackgroundKind::spherical_harmonics) {
      const int k = (cfg.background.sh_degree + 1) * (cfg.background.sh_degree + 1);
      bg_coeffs = Matrix<Scalar>::Zero(3, k);
    }
  }

  /// Seeded initialization of every learnable parameter.
  static FieldModel create(const FieldConfig& config, std::uint64_t seed) {
    FieldModel m(config);
    std::mt19937_64 rng(seed);
    initialize(m.trunk, rng);
    initialize(m.density_head, rng);
    initialize(m.color_head, rng);
    m.density_head.layers.back().bias.setConstant(static_cast<Scalar>(config.density_bias_init));
    if (m.grid_table.size() > 0) {
      std::uniform_real_distribution<double> uni(-1e-4, 1e-4);
      for (Eigen::Index i = 0; i < m.grid_table.size(); ++i) m.grid_table[i] = static_cast<Scalar>(uni(rng));
    }
    return m;
  }

  int trunk_depth() const { return trunk.depth(); }
  int feature_dim() const { return trunk.output_dim(); }
  int encoding_dim() const { return cfg.position.output_dim(); }
  int direction_dim() const { return cfg.direction.output_dim(); }
  const DenseGrid<Scalar>& grid() const { return grid_; }

  /// True when trunk layers at or past `split` re-read the positional encoding.
  bool split_needs_encoding(int split) const {
    for (int s : cfg.trunk_skips)
      if (s >= split && split > 0) return true;
    return false;
  }

  Matrix<Scalar> encode_positions(const Matrix3X<Scalar>& xs) const {
    Matrix<Scalar> out(encoding_dim(), xs.cols());
    for (Eigen::Index i = 0; i < xs.cols(); ++i) {
      const Vec3<Scalar> x = xs.col(i);
      if (cfg.position.kind == PositionalKind::sinusoidal)
        sinusoidal_encode(x, cfg.position.num_frequencies, cfg.position.include_raw_input,
                          out.col(i).data());
      else
        grid_.encode(grid_table, x, out.col(i).data());
    }
    return out;
  }

  /// Accumulates table gradients for d(loss)/d(encoding); no-op for
  /// parameter-free encoders.
  void encode_positions_backward(const Matrix3X<Scalar>& xs, const Matrix<Scalar>& grad,
                                 Vector<Scalar>& table_grad) const {
    if (cfg.position.kind != PositionalKind::dense_grid) return;
    for (Eigen::Index i = 0; i < xs.cols(); ++i) {
      const Vec3<Scalar> x = xs.col(i);
      grid_.backward(x, grad.col(i).data(), table_grad);
    }
  }

  Vector<Scalar> encode_direction(const Vec3<Scalar>& d) const {
    return linerf::encode_direction(cfg.direction, d);
  }

  // --- batched evaluation (one sample per column) ---

  Matrix<Scalar> features(const Matrix3X<Scalar>& xs) const {
    return forward(trunk, encode_positions(xs));
  }

  SplitFeatures<Scalar> split_features(const Matrix3X<Scalar>& xs, int split) const {
    check_split(split);
    SplitFeatures<Scalar> out;
    Matrix<Scalar> enc = encode_positions(xs);
    out.at_split = forward_range(trunk, enc, enc, 0, split);
    out.full = forward_range(trunk, out.at_split, enc, split, trunk_depth());
    if (split_needs_encoding(split)) out.encoding = std::move(enc);
    return out;
  }

  /// Applies the trunk layers after `split` to integrated split features.
  Matrix<Scalar> finish_split(const Matrix<Scalar>& at_split, const Matrix<Scalar>& encoding,
                              int split) const {
    check_split(split);
    const Matrix<Scalar>& orig = split == 0 ? at_split : encoding;
    return forward_range(trunk, at_split, orig, split, trunk_depth());
  }

  Vector<Scalar> densities(const Matrix3X<Scalar>& /*xs*/, const Matrix<Scalar>& feats) const {
    Matrix<Scalar> s = forward(density_head, feats);
    return s.row(0).transpose();
  }

  Matrix<Scalar> color_input(const Matrix<Scalar>& feats, const Vec3<Scalar>& d) const {
    if (feats.rows() != feature_dim())
      throw ConfigError("field_color: feature length " + std::to_string(feats.rows()) +
                        " != feature_dim " + std::to_string(feature_dim()));
    const Vector<Scalar> denc = encode_direction(d);
    Matrix<Scalar> in(feats.rows() + denc.size(), feats.cols());
    in.topRows(feats.rows()) = feats;
    in.bottomRows(denc.size()) = denc.replicate(1, feats.cols());
    return in;
  }

  Matrix<Scalar> colors(const Matrix<Scalar>& feats, const Vec3<Scalar>& d) const {
    return forward(color_head, color_input(feats, d));
  }

  Vec3<Scalar> background(const Vec3<Scalar>& d) const {
    if (cfg.background.kind == BackgroundKind::constant) return cfg.background.color.cast<Scalar>();
    Vector<Scalar> y(bg_coeffs.cols());
    spherical_harmonics(d, cfg.background.sh_degree, y.data());
    Vec3<Scalar> z = bg_coeffs * y;
    return z.unaryExpr([](Scalar v) { return detail::sigmoid(v); });
  }

  /// Every learnable block, in a fixed order shared with FieldGrads.
  std::vector<std::span<Scalar>> blocks() {
    std::vector<std::span<Scalar>> out;
    for (Net<Scalar>* n : {&trunk, &density_head, &color_head})
      for (auto b : n->blocks()) out.push_back(b);
    if (grid_table.size() > 0)
      out.emplace_back(grid_table.data(), static_cast<std::size_t>(grid_table.size()));
    if (bg_coeffs.size() > 0) out.emplace_back(bg_coeffs.data(), static_cast<std::size_t>(bg_coeffs.size()));
    return out;
  }

  std::size_t parameter_count() const {
    return trunk.parameter_count() + density_head.parameter_count() + color_head.parameter_count() +
           static_cast<std::size_t>(grid_table.size() + bg_coeffs.size());
  }

  bool same_architecture(const FieldModel& o) const {
    return trunk.same_shape(o.trunk) && density_head.same_shape(o.density_head) &&
           color_head.same_shape(o.color_head) && grid_table.size() == o.grid_table.size() &&
           bg_coeffs.size() == o.bg_coeffs.size() && encoding_dim() == o.encoding_dim() &&
           direction_dim() == o.direction_dim();
  }

  template <class Other>
  FieldModel<Other> cast() const {
    FieldModel<Other> m(cfg);
    m.trunk = trunk.template cast<Other>();
    m.density_head = density_head.template cast<Other>();
    m.color_head = color_head.template cast<Other>();
    m.grid_table = grid_table.template cast<Other>();
    m.bg_coeffs = bg_coeffs.template cast<Other>();
    return m;
  }

 private:
  void check_split(int split) const {
    if (split < 0 || split > trunk_depth())
      throw ConfigError("split index " + std::to_string(split) + " outside [0, " +
                        std::to_string(trunk_depth()) + "]");
  }

  DenseGrid<Scalar> grid_;
};

// --- single-point helpers ---------------------------------------------------

template <class Scalar>
Vector<Scalar> encode_position(const FieldModel<Scalar>& model, const Vec3<Scalar>& x) {
  Matrix3X<Scalar> xs = x;
  return model.encode_positions(xs).col(0);
}

template <class Scalar>
std::pair<Vector<Scalar>, ForwardTape<Scalar>> field_h(const FieldModel<Scalar>& model,
                                                       const Vec3<Scalar>& x) {
  ForwardTape<Scalar> tape;
  Matrix3X<Scalar> xs = x;
  Matrix<Scalar> h = forward(model.trunk, model.encode_positions(xs), &tape);
  return {Vector<Scalar>(h.col(0)), std::move(tape)};
}

template <class Scalar>
Scalar field_sigma(const FieldModel<Scalar>& model, const Vector<Scalar>& h) {
  Matrix3X<Scalar> none(3, 1);
  return model.densities(none, Matrix<Scalar>(h))[0];
}

template <class Scalar>
Vec3<Scalar> field_color(const FieldModel<Scalar>& model, const Vector<Scalar>& h,
                         const Vec3<Scalar>& d) {
  return model.colors(Matrix<Scalar>(h), d).col(0);
}

template <class Scalar>
std::pair<Vector<Scalar>, ForwardTape<Scalar>> field_h_split(const FieldModel<Scalar>& model,
                                                             const Vec3<Scalar>& x, int split) {
  if (split < 0 || split > model.trunk_depth())
    throw ConfigError("field_h_split: split index out of range");
  ForwardTape<Scalar> tape;
  Matrix3X<Scalar> xs = x;
  Matrix<Scalar> enc = model.encode_positions(xs);
  Matrix<Scalar> a = forward_range(model.trunk, enc, enc, 0, split, &tape);
  return {Vector<Scalar>(a.col(0)), std::move(tape)};
}

// --- JSON configuration -----------------------------------------------------

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                           const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok |= it.key() == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "softplus") return Activation::softplus;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + s + "'");
}

inline Vec3d vec3_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(where + ": expected [x, y, z]");
  return Vec3d(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

}  // namespace detail

inline nlohmann::json to_json(const FieldConfig& c) {
  using nlohmann::json;
  json pos;
  if (c.position.kind == PositionalKind::sinusoidal) {
    pos = {{"kind", "sinusoidal"},
           {"num_frequencies", c.position.num_frequencies},
           {"include_raw_input", c.position.include_raw_input}};
  } else {
    pos = {{"kind", "dense_grid"},
           {"num_levels", c.position.num_levels},
           {"base_resolution", c.position.base_resolution},
           {"per_level_scale", c.position.per_level_scale},
           {"features_per_level", c.position.features_per_level},
           {"box_min", {c.position.box.min.x(), c.position.box.min.y(), c.position.box.min.z()}},
           {"box_max", {c.position.box.max.x(), c.position.box.max.y(), c.position.box.max.z()}}};
  }
  json dir;
  if (c.direction.kind == DirectionalKind::spherical_harmonics)
    dir = {{"kind", "spherical_harmonics"}, {"degree", c.direction.degree}};
  else
    dir = {{"kind", "sinusoidal"},
           {"num_frequencies", c.direction.num_frequencies},
           {"include_raw_input", c.direction.include_raw_input}};
  json bg;
  if (c.background.kind == BackgroundKind::constant)
    bg = {{"kind", "constant"},
          {"color", {c.background.color.x(), c.background.color.y(), c.background.color.z()}}};
  else
    bg = {{"kind", "spherical_harmonics"}, {"sh_degree", c.background.sh_degree}};
  return json{{"preset", c.preset},
              {"position", pos},
              {"direction", dir},
              {"trunk_depth", c.trunk_depth},
              {"trunk_width", c.trunk_width},
              {"trunk_skips", std::vector<int>(c.trunk_skips.begin(), c.trunk_skips.end())},
              {"feature_dim", c.feature_dim},
              {"feature_activation", to_string(c.feature_activation)},
              {"density_hidden", c.density_hidden},
              {"density_bias_init", c.density_bias_init},
              {"color_hidden", c.color_hidden},
              {"color_output", to_string(c.color_output)},
              {"split_index", c.split_index},
              {"background", bg}};
}

/// Parses a model description. Starts from the named preset (or `base`)
/// and applies the keys present; unknown keys are rejected.
inline FieldConfig field_config_from_json(const nlohmann::json& j, FieldConfig base) {
  detail::reject_unknown(j,
                         {"preset", "position", "direction", "trunk_depth", "trunk_width",
                          "trunk_skips", "feature_dim", "feature_activation", "density_hidden",
                          "density_bias_init", "color_hidden", "color_output", "split_index",
                          "background"},
                         "model");
  FieldConfig c = base;
  try {
    if (j.contains("preset")) {
      const auto p = j["preset"].get<std::string>();
      const Aabb box = c.position.box;
      if (p == "mlp") c = preset_mlp();
      else if (p == "grid") c = preset_grid();
      else throw ConfigError("model.preset: expected 'mlp' or 'grid', got '" + p + "'");
      c.position.box = box;
    }
    if (j.contains("position")) {
      const auto& p = j["position"];
      detail::reject_unknown(p,
                             {"kind", "num_frequencies", "include_raw_input", "num_levels",
                              "base_resolution", "per_level_scale", "features_per_level",
                              "box_min", "box_max"},
                             "model.position");
      if (p.contains("kind")) {
        const auto k = p["kind"].get<std::string>();
        if (k == "sinusoidal") c.position.kind = PositionalKind::sinusoidal;
        else if (k == "dense_grid") c.position.kind = PositionalKind::dense_grid;
        else throw ConfigError("model.position.kind: unknown '" + k + "'");
      }
      if (p.contains("num_frequencies")) c.position.num_frequencies = p["num_frequencies"].get<int>();
      if (p.contains("include_raw_input")) c.position.include_raw_input = p["include_raw_input"].get<bool>();
      if (p.contains("num_levels")) c.position.num_levels = p["num_levels"].get<int>();
      if (p.contains("base_resolution")) c.position.base_resolution = p["base_resolution"].get<int>();
      if (p.contains("per_level_scale")) c.position.per_level_scale = p["per_level_scale"].get<double>();
      if (p.contains("features_per_level")) c.position.features_per_level = p["features_per_level"].get<int>();
      if (p.contains("box_min")) c.position.box.min = detail::vec3_from_json(p["box_min"], "model.position.box_min");
      if (p.contains("box_max")) c.position.box.max = detail::vec3_from_json(p["box_max"], "model.position.box_max");
    }
    if (j.contains("direction")) {
      const auto& d = j["direction"];
      detail::reject_unknown(d, {"kind", "num_frequencies", "include_raw_input", "degree"}, "model.direction");
      if (d.contains("kind")) {
        const auto k = d["kind"].get<std::string>();
        if (k == "sinusoidal") c.direction.kind = DirectionalKind::sinusoidal;
        else if (k == "spherical_harmonics" || k == "sh") c.direction.kind = DirectionalKind::spherical_harmonics;
        else throw ConfigError("model.direction.kind: unknown '" + k + "'");
      }
      if (d.contains("num_frequencies")) c.direction.num_frequencies = d["num_frequencies"].get<int>();
      if (d.contains("include_raw_input")) c.direction.include_raw_input = d["include_raw_input"].get<bool>();
      if (d.contains("degree")) c.direction.degree = d["degree"].get<int>();
    }
    if (j.contains("trunk_depth")) c.trunk_depth = j["trunk_depth"].get<int>();
    if (j.contains("trunk_width")) c.trunk_width = j["trunk_width"].get<int>();
    if (j.contains("trunk_skips")) {
      const auto v = j["trunk_skips"].get<std::vector<int>>();
      c.trunk_skips = std::set<int>(v.begin(), v.end());
    }
    if (j.contains("feature_dim")) c.feature_dim = j["feature_dim"].get<int>();
    if (j.contains("feature_activation"))
      c.feature_activation = detail::activation_from_string(j["feature_activation"].get<std::string>());
    if (j.contains("density_hidden")) c.density_hidden = j["density_hidden"].get<std::vector<int>>();
    if (j.contains("density_bias_init")) c.density_bias_init = j["density_bias_init"].get<double>();
    if (j.contains("color_hidden")) c.color_hidden = j["color_hidden"].get<std::vector<int>>();
    if (j.contains("color_output"))
      c.color_output = detail::activation_from_string(j["color_output"].get<std::string>());
    if (j.contains("trunk_depth") && !j.contains("split_index")) c.split_index = c.trunk_depth;
    if (j.contains("split_index")) c.split_index = j["split_index"].get<int>();
    if (j.contains("background")) {
      const auto& b = j["background"];
      detail::reject_unknown(b, {"kind", "color", "sh_degree"}, "model.background");
      if (b.contains("kind")) {
        const auto k = b["kind"].get<std::string>();
        if (k == "constant") c.background.kind = BackgroundKind::constant;
        else if (k == "spherical_harmonics" || k == "sh") c.background.kind = BackgroundKind::spherical_harmonics;
        else throw ConfigError("model.background.kind: unknown '" + k + "'");
      }
      if (b.contains("color")) c.background.color = detail::vec3_from_json(b["color"], "model.background.color");
      if (b.contains("sh_degree")) c.background.sh_degree = b["sh_degree"].get<int>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  c.validate();
  return c;
}

// --- model checkpoints ------------------------------------------------------
// u64 JSON length, JSON header (config + split index + block sizes), then the
// trunk, density head and color head as LNRF blocks, then u64-counted f64
// arrays for the grid table and the background coefficients.

template <class Scalar>
void write_model(std::ostream& os, const FieldModel<Scalar>& m,
                 const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json header{{"format", "linerf-model"},
                        {"version", 1},
                        {"config", to_json(m.cfg)},
                        {"split_index", m.cfg.split_index},
                        {"grid_table_size", m.grid_table.size()},
                        {"background_coeff_count", m.bg_coeffs.size()},
                        {"meta", meta}};
  const std::string text = header.dump();
  detail::put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_net(os, m.trunk);
  write_net(os, m.density_head);
  write_net(os, m.color_head);
  detail::put_u64(os, static_cast<std::uint64_t>(m.grid_table.size()));
  for (Eigen::Index i = 0; i < m.grid_table.size(); ++i) detail::put_f64(os, static_cast<double>(m.grid_table[i]));
  detail::put_u64(os, static_cast<std::uint64_t>(m.bg_coeffs.size()));
  for (Eigen::Index i = 0; i < m.bg_coeffs.size(); ++i)
    detail::put_f64(os, static_cast<double>(m.bg_coeffs.data()[i]));
  if (!os) throw FormatError("failed to write model checkpoint");
}

namespace detail {

inline nlohmann::json read_model_header(std::istream& is) {
  const std::uint64_t len = get_u64(is);
  if (len > (1u << 24)) throw FormatError("model checkpoint: implausible header length");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("model checkpoint truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model checkpoint header: ") + e.what());
  }
  if (!header.is_object() || header.value("format", "") != "linerf-model")
    throw FormatError("not a linerf model checkpoint");
  return header;
}

}  // namespace detail

template <class Scalar>
FieldModel<Scalar> read_model(std::istream& is) {
  const nlohmann::json header = detail::read_model_header(is);
  FieldConfig cfg = field_config_from_json(header.at("config"), FieldConfig{});
  FieldModel<Scalar> m(cfg);
  auto load_net = [&](Net<Scalar>& dst, const char* name) {
    Net<Scalar> n = read_net<Scalar>(is);
    if (!n.same_shape(dst)) throw FormatError(std::string("model checkpoint: ") + name + " shape mismatch");
    dst = std::move(n);
  };
  load_net(m.trunk, "trunk");
  load_net(m.density_head, "density head");
  load_net(m.color_head, "color head");
  const std::uint64_t ng = detail::get_u64(is);
  if (ng != static_cast<std::uint64_t>(m.grid_table.size())) throw FormatError("model checkpoint: grid size mismatch");
  for (Eigen::Index i = 0; i < m.grid_table.size(); ++i) m.grid_table[i] = static_cast<Scalar>(detail::get_f64(is));
  const std::uint64_t nb = detail::get_u64(is);
  if (nb != static_cast<std::uint64_t>(m.bg_coeffs.size())) throw FormatError("model checkpoint: background size mismatch");
  for (Eigen::Index i = 0; i < m.bg_coeffs.size(); ++i) m.bg_coeffs.data()[i] = static_cast<Scalar>(detail::get_f64(is));
  return m;
}

template <class Scalar>
void save_model(const std::string& path, const FieldModel<Scalar>& m,
                const nlohmann::json& meta = nlohmann::json::object()) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  write_model(os, m, meta);
}

/// Free-form metadata stored with a checkpoint (empty object if none).
inline nlohmann::json load_model_meta(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path);
  const nlohmann::json h = detail::read_model_header(is);
  return h.contains("meta") ? h["meta"] : nlohmann::json::object();
}

template <class Scalar>
FieldModel<Scalar> load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path);
  return read_model<Scalar>(is);
}

}  // namespace linerf
