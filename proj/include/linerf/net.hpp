#pragma once

// Dense feed-forward networks with hand-written reverse mode and an Adam
// optimizer. Networks operate on column batches: an input matrix has one
// sample per column.

#include "linerf/common.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace linerf {

enum class Activation : std::uint32_t { relu = 0, sigmoid = 1, softplus = 2, identity = 3 };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softplus: return "softplus";
    case Activation::identity: return "identity";
  }
  return "?";
}

struct LayerSpec {
  int in_dim = 1;
  int out_dim = 1;
  Activation activation = Activation::identity;
};

template <class Scalar>
struct Layer {
  Matrix<Scalar> weight;  // out_dim x in_dim
  Vector<Scalar> bias;
  Activation activation = Activation::identity;
  // When set, this layer consumes [previous output; original input].
  bool skip_input = false;

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }
};

/// Parameters of a dense network. Also used as the gradient container
/// (see `zeros_like`), so gradient and parameter shapes always agree.
template <class Scalar>
struct Net {
  std::vector<Layer<Scalar>> layers;

  Net() = default;

  /// Builds zero-initialized parameters. `skips` holds indices of layers that
  /// receive the original input concatenated after the previous activation.
  Net(int input_dim, const std::vector<std::pair<int, Activation>>& widths,
      const std::set<int>& skips = {}) {
    if (input_dim < 1) throw ConfigError("network input dimension must be >= 1");
    int prev = input_dim;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const auto [out, act] = widths[i];
      if (out < 1) throw ConfigError("layer " + std::to_string(i) + ": out_dim must be >= 1");
      const bool skip = skips.count(static_cast<int>(i)) > 0;
      if (skip && i == 0) throw ConfigError("layer 0 cannot take a skip connection");
      Layer<Scalar> layer;
      const int in = prev + (skip ? input_dim : 0);
      layer.weight = Matrix<Scalar>::Zero(out, in);
      layer.bias = Vector<Scalar>::Zero(out);
      layer.activation = act;
      layer.skip_input = skip;
      layers.push_back(std::move(layer));
      prev = out;
    }
    for (int s : skips) {
      if (s < 0 || s >= static_cast<int>(widths.size()))
        throw ConfigError("skip index " + std::to_string(s) + " out of range");
    }
  }

  int depth() const { return static_cast<int>(layers.size()); }
  int input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  int output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

  /// Width of the activation after `k` layers (k = 0 is the input).
  int activation_dim(int k) const { return k == 0 ? input_dim() : layers[k - 1].out_dim(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  bool same_shape(const Net& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& a = layers[i];
      const auto& b = other.layers[i];
      if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() ||
          a.activation != b.activation || a.skip_input != b.skip_input)
        return false;
    }
    return true;
  }

  void set_zero() {
    for (auto& l : layers) {
      l.weight.setZero();
      l.bias.setZero();
    }
  }

  /// Flat views over every parameter block: weight then bias, per layer.
  std::vector<std::span<Scalar>> blocks() {
    std::vector<std::span<Scalar>> out;
    for (auto& l : layers) {
      out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
    return out;
  }
  std::vector<std::span<const Scalar>> blocks() const {
    std::vector<std::span<const Scalar>> out;
    for (const auto& l : layers) {
      out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
    return out;
  }

  template <class Other>
  Net<Other> cast() const {
    Net<Other> out;
    for (const auto& l : layers) {
      Layer<Other> c;
      c.weight = l.weight.template cast<Other>();
      c.bias = l.bias.template cast<Other>();
      c.activation = l.activation;
      c.skip_input = l.skip_input;
      out.layers.push_back(std::move(c));
    }
    return out;
  }

  Net& operator+=(const Net& other) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].weight += other.layers[i].weight;
      layers[i].bias += other.layers[i].bias;
    }
    return *this;
  }
};

template <class Scalar>
Net<Scalar> zeros_like(const Net<Scalar>& net) {
  Net<Scalar> out = net;
  out.set_zero();
  return out;
}

/// He fan-in scaling for relu layers, Xavier for the rest. Biases start at zero.
template <class Scalar>
void initialize(Net<Scalar>& net, std::mt19937_64& rng) {
  for (auto& l : net.layers) {
    const double fan_in = static_cast<double>(l.in_dim());
    const double fan_out = static_cast<double>(l.out_dim());
    const double stddev = l.activation == Activation::relu ? std::sqrt(2.0 / fan_in)
                                                           : std::sqrt(2.0 / (fan_in + fan_out));
    std::normal_distribution<double> normal(0.0, stddev);
    for (Eigen::Index i = 0; i < l.weight.size(); ++i)
      l.weight.data()[i] = static_cast<Scalar>(normal(rng));
    l.bias.setZero();
  }
}

namespace detail {

template <class Scalar>
inline Scalar sigmoid(Scalar z) {
  if (z >= 0) return Scalar(1) / (Scalar(1) + std::exp(-z));
  const Scalar e = std::exp(z);
  return e / (Scalar(1) + e);
}

template <class Scalar>
inline Scalar softplus(Scalar z) {
  return std::max(z, Scalar(0)) + std::log1p(std::exp(-std::abs(z)));
}

template <class Scalar>
void activate(Activation act, const Matrix<Scalar>& pre, Matrix<Scalar>& post) {
  switch (act) {
    case Activation::relu: post = pre.cwiseMax(Scalar(0)); break;
    case Activation::sigmoid: post = pre.unaryExpr([](Scalar z) { return sigmoid(z); }); break;
    case Activation::softplus: post = pre.unaryExpr([](Scalar z) { return softplus(z); }); break;
    case Activation::identity: post = pre; break;
  }
}

// In place: grad (w.r.t. post) -> grad w.r.t. pre.
template <class Scalar>
void activation_backward(Activation act, const Matrix<Scalar>& pre, const Matrix<Scalar>& post,
                         Matrix<Scalar>& grad) {
  switch (act) {
    case Activation::relu:
      grad = (pre.array() > Scalar(0)).select(grad, Scalar(0));
      break;
    case Activation::sigmoid:
      grad.array() *= post.array() * (Scalar(1) - post.array());
      break;
    case Activation::softplus:
      grad.array() *= pre.unaryExpr([](Scalar z) { return sigmoid(z); }).array();
      break;
    case Activation::identity: break;
  }
}

}  // namespace detail

/// Cached activations of one forward pass over layers [begin, end).
template <class Scalar>
struct ForwardTape {
  int begin = 0;
  int end = 0;
  Matrix<Scalar> original;                   // re-concatenated at skip layers
  std::vector<Matrix<Scalar>> inputs;        // per-layer input (after concatenation)
  std::vector<Matrix<Scalar>> pre;           // pre-activations
  std::vector<Matrix<Scalar>> post;          // post-activations

  std::size_t size() const { return pre.size(); }
  const Matrix<Scalar>& output() const { return post.back(); }
};

/// Runs layers [begin, end) on `x`, the activation entering layer `begin`.
/// `original` is the network input used by skip layers inside the range.
template <class Scalar>
Matrix<Scalar> forward_range(const Net<Scalar>& net, const Matrix<Scalar>& x,
                             const Matrix<Scalar>& original, int begin, int end,
                             ForwardTape<Scalar>* tape = nullptr) {
  if (begin < 0 || end > net.depth() || begin > end)
    throw ConfigError("forward_range: invalid layer range");
  if (x.rows() != net.activation_dim(begin))
    throw ConfigError("forward: expected input of dimension " +
                      std::to_string(net.activation_dim(begin)) + ", got " +
                      std::to_string(x.rows()));
  if (tape) {
    tape->begin = begin;
    tape->end = end;
    tape->inputs.clear();
    tape->pre.clear();
    tape->post.clear();
    bool needs_original = false;
    for (int i = begin; i < end; ++i) needs_original |= net.layers[i].skip_input;
    if (needs_original) tape->original = original;
  }
  Matrix<Scalar> cur = x;
  for (int i = begin; i < end; ++i) {
    const Layer<Scalar>& l = net.layers[i];
    Matrix<Scalar> in;
    if (l.skip_input) {
      if (original.rows() != net.input_dim() || original.cols() != cur.cols())
        throw ConfigError("forward: skip layer " + std::to_string(i) + " needs the original input");
      in.resize(cur.rows() + original.rows(), cur.cols());
      in.topRows(cur.rows()) = cur;
      in.bottomRows(original.rows()) = original;
    } else {
      in = std::move(cur);
    }
    Matrix<Scalar> pre = l.weight * in;
    pre.colwise() += l.bias;
    Matrix<Scalar> post;
    detail::activate(l.activation, pre, post);
    if (tape) {
      tape->inputs.push_back(std::move(in));
      tape->pre.push_back(std::move(pre));
      tape->post.push_back(post);
    }
    cur = std::move(post);
  }
  return cur;
}

template <class Scalar>
Matrix<Scalar> forward(const Net<Scalar>& net, const Matrix<Scalar>& x,
                       ForwardTape<Scalar>* tape = nullptr) {
  return forward_range(net, x, x, 0, net.depth(), tape);
}

/// Reverse pass over a tape. Parameter gradients are ACCUMULATED into
/// `grads`. `input_grad` receives the gradient w.r.t. the activation entering
/// layer tape.begin, `original_grad` the gradient reaching the original input
/// through skip layers (left empty when the range has no skips).
/// `inject`, if given, is added to the gradient of the activation after
/// `inject_at` layers (tape.begin <= inject_at <= tape.end).
template <class Scalar>
void backward(const Net<Scalar>& net, const ForwardTape<Scalar>& tape,
              const Matrix<Scalar>& output_grad, Net<Scalar>& grads,
              Matrix<Scalar>* input_grad = nullptr, Matrix<Scalar>* original_grad = nullptr,
              const Matrix<Scalar>* inject = nullptr, int inject_at = -1) {
  const int n = tape.end - tape.begin;
  if (static_cast<int>(tape.pre.size()) != n || !net.same_shape(grads))
    throw ConfigError("backward: tape or gradient shape does not match the network");
  if (n > 0 && (output_grad.rows() != tape.post.back().rows() ||
                output_grad.cols() != tape.post.back().cols()))
    throw ConfigError("backward: output gradient shape mismatch");
  Matrix<Scalar> g = output_grad;
  if (inject && inject_at == tape.end) g += *inject;
  Matrix<Scalar> orig_acc;
  for (int k = n - 1; k >= 0; --k) {
    const int i = tape.begin + k;
    const Layer<Scalar>& l = net.layers[i];
    if (l.weight.rows() != tape.pre[k].rows() || l.weight.cols() != tape.inputs[k].rows())
      throw ConfigError("backward: tape does not match layer " + std::to_string(i));
    detail::activation_backward(l.activation, tape.pre[k], tape.post[k], g);
    grads.layers[i].weight.noalias() += g * tape.inputs[k].transpose();
    grads.layers[i].bias.noalias() += g.rowwise().sum();
    Matrix<Scalar> gin = l.weight.transpose() * g;
    if (l.skip_input) {
      const Eigen::Index orig_rows = tape.original.rows();
      if (orig_acc.size() == 0) orig_acc = Matrix<Scalar>::Zero(orig_rows, gin.cols());
      orig_acc += gin.bottomRows(orig_rows);
      g = gin.topRows(gin.rows() - orig_rows);
    } else {
      g = std::move(gin);
    }
    if (inject && inject_at == i) g += *inject;
  }
  if (input_grad) *input_grad = std::move(g);
  if (original_grad) *original_grad = std::move(orig_acc);
}

/// Single-sample convenience wrapper.
template <class Scalar>
std::pair<Vector<Scalar>, ForwardTape<Scalar>> net_forward(const Net<Scalar>& net,
                                                           const Vector<Scalar>& input) {
  ForwardTape<Scalar> tape;
  Matrix<Scalar> x = input;
  Matrix<Scalar> out = forward(net, x, &tape);
  return {Vector<Scalar>(out.col(0)), std::move(tape)};
}

/// Gradients of <output, output_grad> w.r.t. all parameters and the input
/// (direct path plus skip paths).
template <class Scalar>
std::pair<Net<Scalar>, Vector<Scalar>> net_backward(const Net<Scalar>& net,
                                                    const ForwardTape<Scalar>& tape,
                                                    const Vector<Scalar>& output_grad) {
  Net<Scalar> grads = zeros_like(net);
  Matrix<Scalar> gin, gorig;
  backward(net, tape, Matrix<Scalar>(output_grad), grads, &gin, &gorig);
  Vector<Scalar> total = gin.col(0);
  if (gorig.size() > 0) total += gorig.col(0);
  return {std::move(grads), std::move(total)};
}

// ---------------------------------------------------------------------------
// Adam

struct AdamHyper {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class Scalar>
struct AdamState {
  AdamHyper hyper;
  std::uint64_t t = 0;
  std::vector<Vector<Scalar>> m;
  std::vector<Vector<Scalar>> v;
};

template <class Scalar>
AdamState<Scalar> make_adam_state(std::span<const std::span<Scalar>> params, AdamHyper hyper = {}) {
  AdamState<Scalar> s;
  s.hyper = hyper;
  for (const auto& p : params) {
    s.m.push_back(Vector<Scalar>::Zero(static_cast<Eigen::Index>(p.size())));
    s.v.push_back(Vector<Scalar>::Zero(static_cast<Eigen::Index>(p.size())));
  }
  return s;
}

/// Bias-corrected Adam over parameter blocks. Throws TrainingError carrying
/// the first block index holding a non-finite gradient; nothing is modified
/// in that case.
template <class Scalar>
void adam_update(std::span<const std::span<Scalar>> params,
                 std::span<const std::span<const Scalar>> grads, AdamState<Scalar>& state) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ConfigError("adam: parameter/gradient/state block counts differ");
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != grads[b].size() ||
        params[b].size() != static_cast<std::size_t>(state.m[b].size()))
      throw ConfigError("adam: block " + std::to_string(b) + " shape mismatch");
    for (Scalar g : grads[b])
      if (!std::isfinite(static_cast<double>(g)))
        throw TrainingError("adam: non-finite gradient in block " + std::to_string(b),
                            static_cast<std::int64_t>(b));
  }
  state.t += 1;
  const auto& h = state.hyper;
  const double t = static_cast<double>(state.t);
  const Scalar b1 = static_cast<Scalar>(h.beta1);
  const Scalar b2 = static_cast<Scalar>(h.beta2);
  const Scalar c1 = static_cast<Scalar>(1.0 / (1.0 - std::pow(h.beta1, t)));
  const Scalar c2 = static_cast<Scalar>(1.0 / (1.0 - std::pow(h.beta2, t)));
  const Scalar lr = static_cast<Scalar>(h.lr);
  const Scalar eps = static_cast<Scalar>(h.eps);
  for (std::size_t b = 0; b < params.size(); ++b) {
    Scalar* p = params[b].data();
    const Scalar* g = grads[b].data();
    Scalar* m = state.m[b].data();
    Scalar* v = state.v[b].data();
    const std::size_t n = params[b].size();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (Scalar(1) - b1) * g[i];
      v[i] = b2 * v[i] + (Scalar(1) - b2) * g[i] * g[i];
      p[i] -= lr * (m[i] * c1) / (std::sqrt(v[i] * c2) + eps);
    }
  }
}

/// Adam step on a single network. Non-finite gradients are reported with the
/// offending layer index.
template <class Scalar>
void adam_step(Net<Scalar>& params, const Net<Scalar>& grads, AdamState<Scalar>& state) {
  if (!params.same_shape(grads)) throw ConfigError("adam_step: gradient shape mismatch");
  auto pb = params.blocks();
  auto gb = grads.blocks();
  if (state.m.empty()) {
    const AdamHyper hyper = state.hyper;
    state = make_adam_state<Scalar>(std::span<const std::span<Scalar>>(pb), hyper);
  }
  try {
    adam_update<Scalar>(pb, gb, state);
  } catch (const TrainingError& e) {
    const auto layer = e.index() / 2;
    throw TrainingError("adam: non-finite gradient in layer " + std::to_string(layer), layer);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: "LNRF", u32 version, u32 layer count, then per layer
// u32 in_dim, u32 out_dim, u32 activation, u32 skip flag, followed by the
// row-major f64 weight matrix and the f64 bias. All little-endian.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff),
                              static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v & 0xffffffffu));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof bits);
  put_u64(os, bits);
}

inline std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is) {
  const std::uint64_t lo = get_u32(is);
  const std::uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}

inline double get_f64(std::istream& is) {
  const std::uint64_t bits = get_u64(is);
  double d;
  std::memcpy(&d, &bits, sizeof d);
  return d;
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class Scalar>
void write_net(std::ostream& os, const Net<Scalar>& net) {
  os.write("LNRF", 4);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(net.depth()));
  for (const auto& l : net.layers) {
    detail::put_u32(os, static_cast<std::uint32_t>(l.in_dim()));
    detail::put_u32(os, static_cast<std::uint32_t>(l.out_dim()));
    detail::put_u32(os, static_cast<std::uint32_t>(l.activation));
    detail::put_u32(os, l.skip_input ? 1u : 0u);
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
        detail::put_f64(os, static_cast<double>(l.weight(r, c)));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r)
      detail::put_f64(os, static_cast<double>(l.bias(r)));
  }
  if (!os) throw FormatError("failed to write network checkpoint");
}

template <class Scalar>
Net<Scalar> read_net(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || std::string(magic.data(), 4) != "LNRF")
    throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = detail::get_u32(is);
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t count = detail::get_u32(is);
  Net<Scalar> net;
  int first_in = 0;
  int prev_out = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto in = static_cast<int>(detail::get_u32(is));
    const auto out = static_cast<int>(detail::get_u32(is));
    const std::uint32_t act = detail::get_u32(is);
    const std::uint32_t skip = detail::get_u32(is);
    if (in < 1 || out < 1 || act > 3 || skip > 1 || (i == 0 && skip))
      throw FormatError("checkpoint: invalid header for layer " + std::to_string(i));
    if (i == 0) first_in = in;
    if (i > 0 && in != prev_out + (skip ? first_in : 0))
      throw FormatError("checkpoint: layer " + std::to_string(i) + " shapes do not chain");
    Layer<Scalar> l;
    l.weight.resize(out, in);
    l.bias.resize(out);
    l.activation = static_cast<Activation>(act);
    l.skip_input = skip != 0;
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) l.weight(r, c) = static_cast<Scalar>(detail::get_f64(is));
    for (int r = 0; r < out; ++r) l.bias(r) = static_cast<Scalar>(detail::get_f64(is));
    net.layers.push_back(std::move(l));
    prev_out = out;
  }
  return net;
}

}  // namespace linerf
