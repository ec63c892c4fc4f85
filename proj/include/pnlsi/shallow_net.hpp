#pragma once

// Scalar-to-scalar fully connected networks (widths 1 -> R -> ... -> R -> 1) with
// hand-written backpropagation and an Adam updater.

#include "pnlsi/common.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pnlsi {

enum class Activation { ReLU, Tanh };

inline std::string to_string(Activation a) { return a == Activation::ReLU ? "relu" : "tanh"; }

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "tanh") return Activation::Tanh;
  throw ValidationError("unknown activation '" + std::string(s) + "' (expected relu|tanh)");
}

/// Weight initialization for fresh networks.
///  Normal:       every weight i.i.d. N(0, 1/R), biases zero.
///  UniformFanIn: weights and biases i.i.d. U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
enum class InitScheme { Normal, UniformFanIn };

inline std::string to_string(InitScheme s) { return s == InitScheme::Normal ? "normal" : "uniform_fan_in"; }

inline InitScheme parse_init_scheme(std::string_view s) {
  if (s == "normal") return InitScheme::Normal;
  if (s == "uniform_fan_in") return InitScheme::UniformFanIn;
  throw ValidationError("unknown init scheme '" + std::string(s) + "'");
}

struct DenseLayer {
  Eigen::MatrixXd W;  // out x in
  Eigen::VectorXd b;  // out
};

/// Gradient with the same layout as the network parameters.
struct NetGradient {
  std::vector<DenseLayer> layers;

  void scale(double s) {
    for (auto& l : layers) {
      l.W *= s;
      l.b *= s;
    }
  }
};

/// Intermediates of a batched forward pass, consumed by backward_batch.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // inputs[l]: input to layer l (width_l x B)
  std::vector<Eigen::MatrixXd> pre;     // pre[l]: pre-activation of hidden layer l
};

class ChannelNet {
 public:
  std::vector<DenseLayer> layers;
  Activation activation = Activation::ReLU;
  bool use_bias = true;

  ChannelNet() = default;
  ChannelNet(std::vector<DenseLayer> ls, Activation act, bool bias)
      : layers(std::move(ls)), activation(act), use_bias(bias) {
    validate();
  }

  static ChannelNet random(int width, int depth, Activation act, bool use_bias, std::mt19937_64& rng,
                           InitScheme scheme = InitScheme::Normal) {
    if (width < 1 || depth < 1) throw ValidationError("network width and depth must be >= 1");
    std::vector<DenseLayer> ls;
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(width)));
    for (int l = 0; l <= depth; ++l) {
      const int in = l == 0 ? 1 : width;
      const int out = l == depth ? 1 : width;
      DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
      if (scheme == InitScheme::Normal) {
        for (Eigen::Index i = 0; i < layer.W.size(); ++i) layer.W.data()[i] = normal(rng);
      } else {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (Eigen::Index i = 0; i < layer.W.size(); ++i) layer.W.data()[i] = u(rng);
        if (use_bias)
          for (Eigen::Index i = 0; i < layer.b.size(); ++i) layer.b(i) = u(rng);
      }
      ls.push_back(std::move(layer));
    }
    return ChannelNet(std::move(ls), act, use_bias);
  }

  /// Exact identity map built from relu(x) - relu(-x); ReLU only, width >= 2.
  static ChannelNet identity(int width, int depth, bool use_bias) {
    if (width < 2 || depth < 1) throw ValidationError("identity network needs width >= 2 and depth >= 1");
    std::vector<DenseLayer> ls;
    for (int l = 0; l <= depth; ++l) {
      const int in = l == 0 ? 1 : width;
      const int out = l == depth ? 1 : width;
      DenseLayer layer{Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out)};
      if (l == 0) {
        layer.W(0, 0) = 1.0;
        layer.W(1, 0) = -1.0;
      } else if (l == depth) {
        layer.W(0, 0) = 1.0;
        layer.W(0, 1) = -1.0;
      } else {
        layer.W(0, 0) = 1.0;
        layer.W(0, 1) = -1.0;
        layer.W(1, 0) = -1.0;
        layer.W(1, 1) = 1.0;
      }
      ls.push_back(std::move(layer));
    }
    return ChannelNet(std::move(ls), Activation::ReLU, use_bias);
  }

  int depth() const { return static_cast<int>(layers.size()) - 1; }
  int width() const { return layers.empty() ? 0 : static_cast<int>(layers.front().W.rows()); }

  void validate() const {
    if (layers.size() < 2) throw ValidationError("network needs at least one hidden layer");
    if (layers.front().W.cols() != 1 || layers.back().W.rows() != 1)
      throw DimensionError("channel network must map scalars to scalars");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& L = layers[l];
      if (L.b.size() != L.W.rows()) throw DimensionError("bias size does not match layer output");
      if (l > 0 && L.W.cols() != layers[l - 1].W.rows()) throw DimensionError("layer widths do not chain");
    }
    if (!finite()) throw NumericError("network parameters are not finite");
  }

  bool finite() const {
    for (const auto& l : layers)
      if (!l.W.allFinite() || !l.b.allFinite()) return false;
    return true;
  }

  /// max over layers of the Frobenius norm of the weights (||w_i||_2 for the one-hidden-layer class).
  double max_weight_norm() const {
    double n = 0.0;
    for (const auto& l : layers) n = std::max(n, l.W.norm());
    return n;
  }

  double forward(double x) const {
    if (!std::isfinite(x)) throw NumericError("non-finite network input");
    Eigen::MatrixXd h(1, 1);
    h(0, 0) = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      Eigen::MatrixXd p = layers[l].W * h;
      if (use_bias) p += layers[l].b;
      if (l + 1 < layers.size()) activate(p);
      h = std::move(p);
    }
    return h(0, 0);
  }

  Eigen::RowVectorXd forward_batch(const Eigen::RowVectorXd& x, ForwardCache& cache) const {
    const std::size_t L = layers.size();
    cache.inputs.resize(L);
    cache.pre.resize(L - 1);
    cache.inputs[0] = x;
    for (std::size_t l = 0; l < L; ++l) {
      Eigen::MatrixXd p = layers[l].W * cache.inputs[l];
      if (use_bias) p.colwise() += layers[l].b;
      if (l + 1 < L) {
        cache.pre[l] = p;
        activate(p);
        cache.inputs[l + 1] = std::move(p);
      } else {
        return p;
      }
    }
    return {};
  }

  /// Forward pass without keeping intermediates.
  Eigen::RowVectorXd forward_batch(const Eigen::RowVectorXd& x) const {
    Eigen::MatrixXd h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      Eigen::MatrixXd p = layers[l].W * h;
      if (use_bias) p.colwise() += layers[l].b;
      if (l + 1 < layers.size()) activate(p);
      h = std::move(p);
    }
    return h;
  }

  /// Gradient of sum_j upstream(j) * net(x_j) w.r.t. parameters; input gradients are
  /// written to `input_grad` when non-null.
  NetGradient backward_batch(const ForwardCache& cache, const Eigen::RowVectorXd& upstream,
                             Eigen::RowVectorXd* input_grad = nullptr) const {
    const std::size_t L = layers.size();
    NetGradient g;
    g.layers.resize(L);
    Eigen::MatrixXd delta = upstream;
    for (std::size_t l = L; l-- > 0;) {
      g.layers[l].W.noalias() = delta * cache.inputs[l].transpose();
      if (use_bias)
        g.layers[l].b = delta.rowwise().sum();
      else
        g.layers[l].b = Eigen::VectorXd::Zero(layers[l].b.size());
      if (l == 0 && input_grad == nullptr) break;
      Eigen::MatrixXd prev = layers[l].W.transpose() * delta;
      if (l > 0) activate_derivative_mul(cache.pre[l - 1], cache.inputs[l], prev);
      delta = std::move(prev);
    }
    if (input_grad != nullptr) *input_grad = delta;
    return g;
  }

  /// Single-sample gradient of upstream * net(x): (parameter gradient, d/dx).
  std::pair<NetGradient, double> backward(double x, double upstream) const {
    ForwardCache cache;
    Eigen::RowVectorXd xr(1);
    xr(0) = x;
    forward_batch(xr, cache);
    Eigen::RowVectorXd up(1), dx;
    up(0) = upstream;
    NetGradient g = backward_batch(cache, up, &dx);
    return {std::move(g), dx(0)};
  }

 private:
  void activate(Eigen::MatrixXd& p) const {
    if (activation == Activation::ReLU)
      p = p.cwiseMax(0.0);
    else
      p = p.array().tanh().matrix();
  }

  // prev *= activation'(pre); `post` is activation(pre).
  void activate_derivative_mul(const Eigen::MatrixXd& pre, const Eigen::MatrixXd& post, Eigen::MatrixXd& prev) const {
    if (activation == Activation::ReLU)
      prev = (pre.array() > 0.0).select(prev.array(), 0.0).matrix();
    else
      prev.array() *= 1.0 - post.array().square();
  }
};

/// Adam moment accumulators for one network.
struct AdamState {
  std::vector<DenseLayer> m;
  std::vector<DenseLayer> v;
  long t = 0;
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  AdamState(const ChannelNet& net, double learning_rate) : lr(learning_rate) {
    for (const auto& l : net.layers) {
      m.push_back({Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()), Eigen::VectorXd::Zero(l.b.size())});
      v.push_back({Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()), Eigen::VectorXd::Zero(l.b.size())});
    }
  }
};

inline void adam_step(ChannelNet& net, const NetGradient& grad, AdamState& st) {
  if (grad.layers.size() != net.layers.size() || st.m.size() != net.layers.size())
    throw DimensionError("adam_step: layer count mismatch");
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& gl = grad.layers[l];
    auto& pl = net.layers[l];
    if (gl.W.rows() != pl.W.rows() || gl.W.cols() != pl.W.cols() || gl.b.size() != pl.b.size() ||
        st.m[l].W.rows() != pl.W.rows() || st.m[l].W.cols() != pl.W.cols())
      throw DimensionError("adam_step: parameter shape mismatch");
  }
  ++st.t;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = st.beta1 * m + (1.0 - st.beta1) * g;
    v = st.beta2 * v + (1.0 - st.beta2) * g.cwiseAbs2();
    p.array() -= st.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + st.eps);
  };
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    update(net.layers[l].W, grad.layers[l].W, st.m[l].W, st.v[l].W);
    if (net.use_bias) update(net.layers[l].b, grad.layers[l].b, st.m[l].b, st.v[l].b);
  }
}

}  // namespace pnlsi
