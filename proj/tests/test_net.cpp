#include "linerf/net.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace linerf;

namespace {

Net<double> random_net(int in, const std::vector<std::pair<int, Activation>>& widths, const std::set<int>& skips,
                       std::uint64_t seed) {
  Net<double> net(in, widths, skips);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.7);
  for (auto& l : net.layers) {
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = n(rng);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = n(rng);
  }
  return net;
}

Vector<double> random_vector(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

double act(Activation a, double z) {
  switch (a) {
    case Activation::relu: return z > 0 ? z : 0;
    case Activation::sigmoid: return 1 / (1 + std::exp(-z));
    case Activation::softplus: return std::log(1 + std::exp(z));
    case Activation::identity: return z;
  }
  return 0;
}

// Loop-free-per-layer scalar evaluation, independent of the Eigen path.
std::vector<double> reference_forward(const Net<double>& net, const std::vector<double>& x) {
  std::vector<double> cur = x;
  for (const auto& l : net.layers) {
    std::vector<double> in = cur;
    if (l.skip_input) in.insert(in.end(), x.begin(), x.end());
    std::vector<double> out(static_cast<std::size_t>(l.out_dim()));
    for (int r = 0; r < l.out_dim(); ++r) {
      double s = l.bias[r];
      for (int c = 0; c < l.in_dim(); ++c) s += l.weight(r, c) * in[static_cast<std::size_t>(c)];
      out[static_cast<std::size_t>(r)] = act(l.activation, s);
    }
    cur = std::move(out);
  }
  return cur;
}

double objective(const Net<double>& net, const Vector<double>& x, const Vector<double>& g) {
  return net_forward(net, x).first.dot(g);
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-6, std::max(std::abs(a), std::abs(b))); }

// Every parameter and input gradient entry against central differences.
void check_gradients(Net<double> net, const Vector<double>& x0, const Vector<double>& g, double tol) {
  auto [y, tape] = net_forward(net, x0);
  auto [pg, ig] = net_backward(net, tape, g);
  const double h = 1e-4;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    auto& l = net.layers[li];
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) {
      double& w = l.weight.data()[i];
      const double w0 = w;
      w = w0 + h;
      const double fp = objective(net, x0, g);
      w = w0 - h;
      const double fm = objective(net, x0, g);
      w = w0;
      const double fd = (fp - fm) / (2 * h);
      ASSERT_LT(rel_err(fd, pg.layers[li].weight.data()[i]), tol) << "layer " << li << " weight " << i;
    }
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) {
      double& b = l.bias[i];
      const double b0 = b;
      b = b0 + h;
      const double fp = objective(net, x0, g);
      b = b0 - h;
      const double fm = objective(net, x0, g);
      b = b0;
      ASSERT_LT(rel_err((fp - fm) / (2 * h), pg.layers[li].bias[i]), tol) << "layer " << li << " bias " << i;
    }
  }
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    Vector<double> xp = x0, xm = x0;
    xp[i] += h;
    xm[i] -= h;
    const double fd = (objective(net, xp, g) - objective(net, xm, g)) / (2 * h);
    ASSERT_LT(rel_err(fd, ig[i]), tol) << "input " << i;
  }
}

}  // namespace

TEST(Net, ShapesChainWithSkips) {
  Net<double> net(3, {{8, Activation::relu}, {8, Activation::relu}, {4, Activation::identity}}, {2});
  EXPECT_EQ(net.layers[0].weight.rows(), 8);
  EXPECT_EQ(net.layers[0].weight.cols(), 3);
  EXPECT_EQ(net.layers[2].weight.cols(), 8 + 3);
  EXPECT_EQ(net.output_dim(), 4);
  EXPECT_EQ(net.parameter_count(), std::size_t(8 * 3 + 8 + 8 * 8 + 8 + 4 * 11 + 4));
}

TEST(Net, InvalidSpecsRejected) {
  EXPECT_THROW(Net<double>(0, {{2, Activation::relu}}), ConfigError);
  EXPECT_THROW(Net<double>(2, {{0, Activation::relu}}), ConfigError);
  EXPECT_THROW(Net<double>(2, {{2, Activation::relu}}, {0}), ConfigError);
  EXPECT_THROW(Net<double>(2, {{2, Activation::relu}}, {3}), ConfigError);
}

TEST(Net, ZeroNetGivesZero) {
  Net<double> net(4, {{5, Activation::identity}, {3, Activation::identity}});
  const auto [y, tape] = net_forward(net, random_vector(4, 1));
  EXPECT_EQ(y, Vector<double>::Zero(3));
  EXPECT_EQ(tape.size(), 2u);
}

TEST(Net, ReluIdentityExample) {
  Net<double> net(2, {{2, Activation::relu}});
  net.layers[0].weight.setIdentity();
  Vector<double> x(2);
  x << -1, 2;
  const auto y = net_forward(net, x).first;
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 2.0);
}

TEST(Net, DimensionMismatchIsConfigError) {
  Net<double> net(3, {{2, Activation::relu}});
  EXPECT_THROW(net_forward(net, Vector<double>(Vector<double>::Zero(4))), ConfigError);
}

TEST(Net, MatchesStraightLineEvaluation) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto net = random_net(
        4, {{6, Activation::relu}, {5, Activation::softplus}, {3, Activation::sigmoid}}, seed % 2 ? std::set<int>{2} : std::set<int>{},
        seed);
    const auto x = random_vector(4, seed + 100);
    const auto y = net_forward(net, x).first;
    const auto ref = reference_forward(net, std::vector<double>(x.data(), x.data() + 4));
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(y[i], ref[static_cast<std::size_t>(i)], 1e-12);
  }
}

TEST(Net, LinearClosedFormGradients) {
  auto net = random_net(3, {{2, Activation::identity}}, {}, 7);
  const auto x = random_vector(3, 8);
  const auto g = random_vector(2, 9);
  const auto [y, tape] = net_forward(net, x);
  const auto [pg, ig] = net_backward(net, tape, g);
  const Matrix<double> gw = g * x.transpose();
  EXPECT_TRUE(pg.layers[0].weight.isApprox(gw, 1e-14));
  EXPECT_TRUE(pg.layers[0].bias.isApprox(g, 1e-14));
  EXPECT_TRUE(ig.isApprox(net.layers[0].weight.transpose() * g, 1e-14));
}

TEST(Net, ZeroOutputGradGivesZeroGradients) {
  const auto net = random_net(3, {{4, Activation::relu}, {4, Activation::relu}, {2, Activation::sigmoid}}, {2}, 3);
  const auto [y, tape] = net_forward(net, random_vector(3, 4));
  const auto [pg, ig] = net_backward(net, tape, Vector<double>(Vector<double>::Zero(2)));
  for (const auto& b : pg.blocks())
    for (double v : b) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(ig, Vector<double>::Zero(3));
}

TEST(Net, BackwardShapeMismatchIsConfigError) {
  const auto net = random_net(3, {{4, Activation::relu}, {2, Activation::identity}}, {}, 1);
  const auto other = random_net(3, {{5, Activation::relu}, {2, Activation::identity}}, {}, 1);
  const auto [y, tape] = net_forward(other, random_vector(3, 2));
  EXPECT_THROW(net_backward(net, tape, Vector<double>(Vector<double>::Ones(2))), ConfigError);
}

TEST(Net, GradientsMatchFiniteDifferences) {
  const std::vector<Activation> acts{Activation::relu, Activation::sigmoid, Activation::softplus, Activation::identity};
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const Activation a0 = acts[rng() % 4], a1 = acts[rng() % 4], a2 = acts[rng() % 4];
    const std::set<int> skips = seed % 2 ? std::set<int>{1} : (seed % 3 ? std::set<int>{2} : std::set<int>{});
    const auto net = random_net(3, {{5, a0}, {4, a1}, {2, a2}}, skips, seed);
    check_gradients(net, random_vector(3, seed + 1000), random_vector(2, seed + 2000), 1e-4);
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Net<double> p(1, {{1, Activation::identity}});
  p.layers[0].weight(0, 0) = 1.0;
  Net<double> g = zeros_like(p);
  g.layers[0].weight(0, 0) = 1.0;
  AdamState<double> s;
  s.hyper.lr = 0.1;
  s.hyper.eps = 1e-8;
  adam_step(p, g, s);
  EXPECT_NEAR(p.layers[0].weight(0, 0), 1.0 - 0.1 / (1 + 1e-8), 1e-12);
  EXPECT_EQ(p.layers[0].bias[0], 0.0);
  EXPECT_EQ(s.t, 1u);
}

TEST(Adam, ZeroGradientLeavesParams) {
  Net<double> p = random_net(2, {{3, Activation::relu}}, {}, 5);
  const Net<double> before = p;
  AdamState<double> s;
  adam_step(p, zeros_like(p), s);
  EXPECT_EQ(p.layers[0].weight, before.layers[0].weight);
  EXPECT_EQ(p.layers[0].bias, before.layers[0].bias);
}

TEST(Adam, TwoStepsMatchHandRecursion) {
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8, grad = 0.3;
  Net<double> p(1, {{1, Activation::identity}});
  p.layers[0].weight(0, 0) = 2.0;
  Net<double> g = zeros_like(p);
  g.layers[0].weight(0, 0) = grad;
  AdamState<double> s;
  s.hyper = {lr, b1, b2, eps};
  adam_step(p, g, s);
  adam_step(p, g, s);
  double x = 2.0, m = 0, v = 0;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad * grad;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);
  }
  EXPECT_NEAR(p.layers[0].weight(0, 0), x, 1e-14);
  EXPECT_EQ(s.t, 2u);
}

TEST(Adam, NonFiniteGradientNamesLayerAndKeepsParams) {
  Net<double> p = random_net(2, {{3, Activation::relu}, {2, Activation::identity}}, {}, 9);
  const Net<double> before = p;
  Net<double> g = zeros_like(p);
  g.layers[1].bias[0] = std::nan("");
  AdamState<double> s;
  try {
    adam_step(p, g, s);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.index(), 1);
  }
  EXPECT_EQ(p.layers[0].weight, before.layers[0].weight);
  EXPECT_EQ(p.layers[1].bias, before.layers[1].bias);
  EXPECT_EQ(s.t, 0u);
}

TEST(Adam, DeterministicAcrossRuns) {
  auto run = [] {
    Net<double> p = random_net(3, {{4, Activation::relu}, {2, Activation::sigmoid}}, {1}, 11);
    AdamState<double> s;
    for (int k = 0; k < 5; ++k) {
      const auto [y, tape] = net_forward(p, random_vector(3, static_cast<std::uint64_t>(k)));
      const auto [pg, ig] = net_backward(p, tape, y);
      adam_step(p, pg, s);
    }
    std::ostringstream os;
    write_net(os, p);
    return os.str();
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto net = random_net(3, {{6, Activation::relu}, {5, Activation::softplus}, {2, Activation::sigmoid}}, {2}, 21);
  std::stringstream ss;
  write_net(ss, net);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 4), "LNRF");
  const auto back = read_net<double>(ss);
  ASSERT_TRUE(back.same_shape(net));
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    EXPECT_EQ(back.layers[i].weight, net.layers[i].weight);
    EXPECT_EQ(back.layers[i].bias, net.layers[i].bias);
  }
  std::ostringstream again;
  write_net(again, back);
  EXPECT_EQ(again.str(), bytes);
  // header + per-layer (4 u32 + f64 payload)
  EXPECT_EQ(bytes.size(), 12 + 3 * 16 + 8 * net.parameter_count());
}

TEST(Checkpoint, BadMagicAndTruncationRejected) {
  std::stringstream bad("LNRX\x01\0\0\0");
  EXPECT_THROW(read_net<double>(bad), FormatError);
  const auto net = random_net(2, {{2, Activation::relu}}, {}, 1);
  std::ostringstream os;
  write_net(os, net);
  std::string bytes = os.str();
  bytes.resize(bytes.size() - 3);
  std::istringstream trunc(bytes);
  EXPECT_THROW(read_net<double>(trunc), FormatError);
}
