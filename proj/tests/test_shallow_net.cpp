#include "pnlsi/shallow_net.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace pnlsi;

namespace {

ChannelNet hand_net() {
  std::vector<DenseLayer> ls(2);
  ls[0].W = Eigen::MatrixXd(2, 1);
  ls[0].W << 1.0, -1.0;
  ls[0].b = Eigen::VectorXd::Zero(2);
  ls[1].W = Eigen::MatrixXd(1, 2);
  ls[1].W << 1.0, 1.0;
  ls[1].b = Eigen::VectorXd::Zero(1);
  return ChannelNet(ls, Activation::ReLU, true);
}

// Scalar loops over plain arrays, sharing nothing with the library's matrix code.
double oracle_forward(const ChannelNet& net, double x) {
  std::vector<double> h{x};
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& L = net.layers[l];
    std::vector<double> out(L.W.rows());
    for (Eigen::Index i = 0; i < L.W.rows(); ++i) {
      double s = net.use_bias ? L.b(i) : 0.0;
      for (Eigen::Index j = 0; j < L.W.cols(); ++j) s += L.W(i, j) * h[j];
      if (l + 1 < net.layers.size()) s = net.activation == Activation::ReLU ? (s > 0 ? s : 0.0) : std::tanh(s);
      out[i] = s;
    }
    h = out;
  }
  return h[0];
}

double max_abs(const NetGradient& g) {
  double v = 0.0;
  for (const auto& l : g.layers) v = std::max({v, l.W.cwiseAbs().maxCoeff(), l.b.cwiseAbs().maxCoeff()});
  return v;
}

}  // namespace

TEST(Forward, HandComputedRelu) { EXPECT_DOUBLE_EQ(hand_net().forward(2.0), 2.0); }

TEST(Forward, ZeroBiasMapsOriginToOrigin) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10; ++t) {
    for (auto act : {Activation::ReLU, Activation::Tanh}) {
      const ChannelNet net = ChannelNet::random(16, 1 + t % 3, act, false, rng);
      EXPECT_DOUBLE_EQ(net.forward(0.0), 0.0);
    }
  }
}

TEST(Forward, MatchesScalarOracle) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const auto act = t % 2 ? Activation::Tanh : Activation::ReLU;
    const ChannelNet net = ChannelNet::random(8 + t, 1 + t % 3, act, t % 3 != 0, rng, InitScheme::UniformFanIn);
    EXPECT_NEAR(net.forward(0.5), oracle_forward(net, 0.5), 1e-12);
    Eigen::RowVectorXd xs = Eigen::RowVectorXd::LinSpaced(7, -2.0, 2.0);
    const Eigen::RowVectorXd ys = net.forward_batch(xs);
    for (Eigen::Index i = 0; i < xs.size(); ++i) EXPECT_NEAR(ys(i), oracle_forward(net, xs(i)), 1e-12);
  }
}

TEST(Forward, NonFiniteInputThrows) {
  EXPECT_THROW(hand_net().forward(std::nan("")), NumericError);
  EXPECT_THROW(hand_net().forward(INFINITY), NumericError);
}

TEST(Backward, FiniteDifferenceTanh) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ux(-1.5, 1.5);
  const double h = 1e-5;
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    ChannelNet net = ChannelNet::random(4 + t % 13, 1 + t % 2, Activation::Tanh, true, rng, InitScheme::UniformFanIn);
    const double x = ux(rng);
    const double up = 0.5 + ux(rng);
    const auto [g, dx] = net.backward(x, up);
    // Relative error against the central difference, normalized by the gradient scale.
    auto rel = [&](double analytic, double numeric) {
      return std::abs(analytic - numeric) / std::max(1.0, std::max(std::abs(analytic), std::abs(numeric)));
    };
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      for (Eigen::Index i = 0; i < net.layers[l].W.size(); ++i) {
        double& w = net.layers[l].W.data()[i];
        const double w0 = w;
        w = w0 + h;
        const double fp = up * net.forward(x);
        w = w0 - h;
        const double fm = up * net.forward(x);
        w = w0;
        worst = std::max(worst, rel(g.layers[l].W.data()[i], (fp - fm) / (2 * h)));
      }
      for (Eigen::Index i = 0; i < net.layers[l].b.size(); ++i) {
        double& b = net.layers[l].b(i);
        const double b0 = b;
        b = b0 + h;
        const double fp = up * net.forward(x);
        b = b0 - h;
        const double fm = up * net.forward(x);
        b = b0;
        worst = std::max(worst, rel(g.layers[l].b(i), (fp - fm) / (2 * h)));
      }
    }
    worst = std::max(worst, rel(dx, up * (net.forward(x + h) - net.forward(x - h)) / (2 * h)));
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Backward, LinearReluRegimeOutputWeightGradient) {
  std::vector<DenseLayer> ls(2);
  ls[0].W = Eigen::MatrixXd::Constant(3, 1, 1.0);
  ls[0].W << 0.5, 1.0, 2.0;
  ls[0].b = Eigen::VectorXd::Zero(3);
  ls[1].W = Eigen::MatrixXd(1, 3);
  ls[1].W << 0.3, -0.2, 0.7;
  ls[1].b = Eigen::VectorXd::Zero(1);
  const ChannelNet net(ls, Activation::ReLU, true);
  const auto [g, dx] = net.backward(1.5, 1.0);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(g.layers[1].W(0, i), ls[0].W(i, 0) * 1.5);
  EXPECT_DOUBLE_EQ(dx, 0.3 * 0.5 - 0.2 * 1.0 + 0.7 * 2.0);
}

TEST(Backward, ReluSubgradientAtZeroIsZero) {
  const ChannelNet net = hand_net();
  const auto [g, dx] = net.backward(0.0, 1.0);
  EXPECT_DOUBLE_EQ(dx, 0.0);
  EXPECT_DOUBLE_EQ(g.layers[0].W(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(g.layers[0].W(1, 0), 0.0);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 rng(4);
  const ChannelNet net = ChannelNet::random(10, 2, Activation::Tanh, true, rng);
  const auto [g, dx] = net.backward(0.7, 0.0);
  EXPECT_EQ(max_abs(g), 0.0);
  EXPECT_EQ(dx, 0.0);
}

TEST(Backward, BatchGradientIsSumOfSingleGradients) {
  std::mt19937_64 rng(5);
  const ChannelNet net = ChannelNet::random(6, 2, Activation::ReLU, true, rng, InitScheme::UniformFanIn);
  Eigen::RowVectorXd x(4), up(4);
  x << -0.3, 0.1, 0.8, 1.9;
  up << 1.0, -2.0, 0.5, 0.25;
  ForwardCache cache;
  net.forward_batch(x, cache);
  Eigen::RowVectorXd dx;
  const NetGradient gb = net.backward_batch(cache, up, &dx);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(gb.layers[l].W.rows(), gb.layers[l].W.cols());
    for (int i = 0; i < 4; ++i) W += net.backward(x(i), up(i)).first.layers[l].W;
    EXPECT_LE((W - gb.layers[l].W).cwiseAbs().maxCoeff(), 1e-12);
  }
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(dx(i), net.backward(x(i), up(i)).second, 1e-12);
}

TEST(Identity, ReproducesInput) {
  for (int depth = 1; depth <= 3; ++depth) {
    const ChannelNet net = ChannelNet::identity(8, depth, true);
    for (double x : {-3.5, -1.0, 0.0, 0.25, 42.0}) EXPECT_DOUBLE_EQ(net.forward(x), x);
  }
}

TEST(Init, UniformFanInBounds) {
  std::mt19937_64 rng(6);
  const ChannelNet net = ChannelNet::random(64, 1, Activation::ReLU, true, rng, InitScheme::UniformFanIn);
  EXPECT_LE(net.layers[0].W.cwiseAbs().maxCoeff(), 1.0);
  EXPECT_LE(net.layers[1].W.cwiseAbs().maxCoeff(), 1.0 / 8.0);
  EXPECT_GT(net.layers[0].b.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Init, NormalHasZeroBias) {
  std::mt19937_64 rng(7);
  const ChannelNet net = ChannelNet::random(64, 1, Activation::ReLU, true, rng, InitScheme::Normal);
  EXPECT_EQ(net.layers[0].b.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Validate, RejectsBadShapes) {
  std::vector<DenseLayer> ls(2);
  ls[0].W = Eigen::MatrixXd::Ones(3, 1);
  ls[0].b = Eigen::VectorXd::Zero(3);
  ls[1].W = Eigen::MatrixXd::Ones(1, 2);
  ls[1].b = Eigen::VectorXd::Zero(1);
  EXPECT_THROW(ChannelNet(ls, Activation::ReLU, true), DimensionError);
  std::mt19937_64 rng(0);
  EXPECT_THROW(ChannelNet::random(0, 1, Activation::ReLU, true, rng), ValidationError);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::mt19937_64 rng(8);
  ChannelNet net = ChannelNet::random(5, 1, Activation::Tanh, true, rng, InitScheme::UniformFanIn);
  const ChannelNet before = net;
  AdamState st(net, 0.1);
  NetGradient g = net.backward(0.3, 0.0).first;
  for (int i = 0; i < 3; ++i) adam_step(net, g, st);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    EXPECT_EQ(net.layers[l].W, before.layers[l].W);
    EXPECT_EQ(net.layers[l].b, before.layers[l].b);
  }
}

TEST(Adam, HandComputedTrace) {
  // Constant gradient 1 on every parameter. The textbook recursion, written out:
  // m_t = 0.9 m + 0.1, v_t = 0.999 v + 0.001, step = lr * mhat / (sqrt(vhat) + eps).
  ChannelNet net = hand_net();
  const double w0 = net.layers[1].W(0, 0);
  AdamState st(net, 0.1);
  NetGradient g = net.backward(1.0, 1.0).first;
  for (auto& l : g.layers) {
    l.W.setConstant(1.0);
    l.b.setConstant(1.0);
  }
  double m = 0.0, v = 0.0, w = w0;
  for (int t = 1; t <= 5; ++t) {
    adam_step(net, g, st);
    m = 0.9 * m + 0.1;
    v = 0.999 * v + 0.001;
    const double mhat = m / (1.0 - std::pow(0.9, t));
    const double vhat = v / (1.0 - std::pow(0.999, t));
    w -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
    EXPECT_NEAR(net.layers[1].W(0, 0), w, 1e-14);
  }
  // Constant gradient: bias-corrected moments are exactly 1, so each step is lr.
  EXPECT_NEAR(net.layers[1].W(0, 0), w0 - 0.5, 1e-6);
}

TEST(Adam, FirstStepIsLrTimesSign) {
  ChannelNet net = hand_net();
  const double w = net.layers[1].W(0, 1);
  AdamState st(net, 0.01);
  NetGradient g = net.backward(1.0, 1.0).first;
  for (auto& l : g.layers) {
    l.W.setConstant(-3.0);
    l.b.setConstant(0.0);
  }
  adam_step(net, g, st);
  EXPECT_NEAR(net.layers[1].W(0, 1) - w, 0.01, 1e-9);
}

TEST(Adam, NoBiasUpdateWithoutBias) {
  std::mt19937_64 rng(9);
  ChannelNet net = ChannelNet::random(4, 1, Activation::Tanh, false, rng);
  AdamState st(net, 0.1);
  NetGradient g = net.backward(0.5, 1.0).first;
  for (auto& l : g.layers) l.b.setConstant(1.0);
  adam_step(net, g, st);
  for (const auto& l : net.layers) EXPECT_EQ(l.b.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Adam, ShapeMismatchThrows) {
  std::mt19937_64 rng(10);
  ChannelNet a = ChannelNet::random(4, 1, Activation::Tanh, true, rng);
  const ChannelNet b = ChannelNet::random(5, 1, Activation::Tanh, true, rng);
  AdamState st(a, 0.1);
  EXPECT_THROW(adam_step(a, b.backward(0.1, 1.0).first, st), DimensionError);
}
