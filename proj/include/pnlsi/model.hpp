#pragma once

// Post-nonlinear mixture model x = g(A s): nonlinearity catalog, latent
// distributions and seeded synthetic data generation.

#include "pnlsi/common.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace pnlsi {

enum class NonlinearityKind { ScaledExp, ScaledSigmoid, ScaledTanhPlusLinear };

inline std::string to_string(NonlinearityKind k) {
  switch (k) {
    case NonlinearityKind::ScaledExp: return "scaled_exp";
    case NonlinearityKind::ScaledSigmoid: return "scaled_sigmoid";
    case NonlinearityKind::ScaledTanhPlusLinear: return "scaled_tanh_plus_linear";
  }
  return "unknown";
}

inline NonlinearityKind parse_nonlinearity_kind(std::string_view s) {
  if (s == "scaled_exp" || s == "exp") return NonlinearityKind::ScaledExp;
  if (s == "scaled_sigmoid" || s == "sigmoid") return NonlinearityKind::ScaledSigmoid;
  if (s == "scaled_tanh_plus_linear" || s == "tanh") return NonlinearityKind::ScaledTanhPlusLinear;
  throw ValidationError("unknown nonlinearity kind '" + std::string(s) + "'");
}

/// Invertible scalar distortion g(z):
///   ScaledExp            beta * exp(alpha z)
///   ScaledSigmoid        beta * sigmoid(alpha z)
///   ScaledTanhPlusLinear beta * tanh(alpha z) + gamma z
struct Nonlinearity {
  NonlinearityKind kind = NonlinearityKind::ScaledTanhPlusLinear;
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 0.0;

  /// g(z) = z, expressed as the tanh variant with beta = 0, gamma = 1.
  static Nonlinearity identity() { return {NonlinearityKind::ScaledTanhPlusLinear, 1.0, 0.0, 1.0}; }

  void validate() const {
    if (!std::isfinite(alpha) || !std::isfinite(beta) || !std::isfinite(gamma))
      throw ValidationError("nonlinearity parameters must be finite");
    if (kind == NonlinearityKind::ScaledTanhPlusLinear) {
      if (gamma < 0.0) throw ValidationError("tanh variant requires gamma >= 0");
      if (alpha * beta < 0.0) throw ValidationError("tanh variant requires alpha*beta >= 0");
      if (alpha * beta == 0.0 && gamma == 0.0)
        throw ValidationError("tanh variant with alpha*beta = 0 needs gamma > 0");
      return;
    }
    if (alpha == 0.0 || beta == 0.0) throw ValidationError("nonlinearity requires alpha != 0 and beta != 0");
    if (alpha * beta < 0.0) throw ValidationError("nonlinearity must be increasing (alpha*beta > 0)");
  }

  double operator()(double z) const {
    switch (kind) {
      case NonlinearityKind::ScaledExp: return beta * std::exp(alpha * z);
      case NonlinearityKind::ScaledSigmoid: return beta / (1.0 + std::exp(-alpha * z));
      case NonlinearityKind::ScaledTanhPlusLinear: return beta * std::tanh(alpha * z) + gamma * z;
    }
    return std::numeric_limits<double>::quiet_NaN();
  }

  /// Open range (lo, hi) of g on the real line.
  std::pair<double, double> range() const {
    constexpr double inf = std::numeric_limits<double>::infinity();
    switch (kind) {
      case NonlinearityKind::ScaledExp: return beta > 0 ? std::pair{0.0, inf} : std::pair{-inf, 0.0};
      case NonlinearityKind::ScaledSigmoid: return beta > 0 ? std::pair{0.0, beta} : std::pair{beta, 0.0};
      case NonlinearityKind::ScaledTanhPlusLinear:
        if (gamma > 0) return {-inf, inf};
        return {-std::abs(beta), std::abs(beta)};
    }
    return {inf, -inf};
  }

  double inverse(double y) const {
    const auto [lo, hi] = range();
    if (!(y > lo && y < hi)) throw DomainError("value " + std::to_string(y) + " outside the range of " + to_string(kind));
    switch (kind) {
      case NonlinearityKind::ScaledExp: return std::log(y / beta) / alpha;
      case NonlinearityKind::ScaledSigmoid: {
        const double p = y / beta;
        return std::log(p / (1.0 - p)) / alpha;
      }
      case NonlinearityKind::ScaledTanhPlusLinear:
        if (gamma == 0.0) return std::atanh(y / beta) / alpha;
        if (beta == 0.0) return y / gamma;
        return bisect_inverse(y);
    }
    return std::numeric_limits<double>::quiet_NaN();
  }

 private:
  double bisect_inverse(double y) const {
    // g is increasing and unbounded, so expand the bracket until it straddles y.
    double lo = -1.0, hi = 1.0;
    while ((*this)(lo) > y) lo *= 2.0;
    while ((*this)(hi) < y) hi *= 2.0;
    for (int it = 0; it < 400 && hi - lo > 1e-12 * (1.0 + std::abs(lo)); ++it) {
      const double mid = 0.5 * (lo + hi);
      if ((*this)(mid) < y) lo = mid; else hi = mid;
    }
    return 0.5 * (lo + hi);
  }
};

/// Ground-truth model: mixing matrix A (M x K) and one distortion per observed channel.
struct PnlModel {
  Eigen::MatrixXd A;
  std::vector<Nonlinearity> g;

  Eigen::Index M() const { return A.rows(); }
  Eigen::Index K() const { return A.cols(); }

  void validate() const {
    if (M() <= K()) throw DimensionError("M <= K: null space of A^T is trivial");
    if (static_cast<Eigen::Index>(g.size()) != M())
      throw DimensionError("model needs one nonlinearity per observed channel");
    if (!A.allFinite()) throw ValidationError("mixing matrix has non-finite entries");
    if (linalg::numeric_rank(A, 1e-10) < K()) throw ValidationError("mixing matrix is not full column rank");
    for (const auto& gm : g) gm.validate();
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& z) const {
    Eigen::VectorXd x(z.size());
    for (Eigen::Index m = 0; m < z.size(); ++m) x(m) = g[m](z(m));
    return x;
  }
};

enum class LatentKind { IndependentUniform, Simplex };

struct LatentSpec {
  LatentKind kind = LatentKind::IndependentUniform;
  int K = 3;
  double lo = -1.0;
  double hi = 1.0;

  static LatentSpec independent_uniform(int K, double lo = -1.0, double hi = 1.0) {
    return {LatentKind::IndependentUniform, K, lo, hi};
  }
  static LatentSpec simplex(int K) { return {LatentKind::Simplex, K, 0.0, 1.0}; }

  /// Number of locally free components.
  int free_count() const { return kind == LatentKind::Simplex ? K - 1 : K; }

  void validate() const {
    if (K < 1) throw DimensionError("latent dimension must be >= 1");
    if (kind == LatentKind::IndependentUniform && !(lo < hi)) throw ValidationError("uniform latent needs lo < hi");
  }
};

inline std::string to_string(LatentKind k) { return k == LatentKind::Simplex ? "simplex" : "independent_uniform"; }

inline LatentKind parse_latent_kind(std::string_view s) {
  if (s == "simplex") return LatentKind::Simplex;
  if (s == "independent_uniform" || s == "uniform") return LatentKind::IndependentUniform;
  throw ValidationError("unknown latent kind '" + std::string(s) + "'");
}

struct MixtureDataset {
  Eigen::MatrixXd X;                 // M x N observations
  std::optional<Eigen::MatrixXd> S;  // K x N latents (synthetic only)
  std::optional<Eigen::MatrixXd> Z;  // M x N pre-distortion A S
  std::uint64_t seed = 0;

  Eigen::Index M() const { return X.rows(); }
  Eigen::Index N() const { return X.cols(); }
};

inline const std::vector<NonlinearityKind>& full_catalog() {
  static const std::vector<NonlinearityKind> kinds{NonlinearityKind::ScaledExp, NonlinearityKind::ScaledSigmoid,
                                                   NonlinearityKind::ScaledTanhPlusLinear};
  return kinds;
}

/// Draws A with i.i.d. standard normal entries and one catalog nonlinearity per channel.
/// `kinds` of length M assigns kinds in order; any other non-empty list is a pool sampled
/// uniformly; an empty list samples from the full catalog.
inline PnlModel sample_model(int M, int K, const std::vector<NonlinearityKind>& kinds, std::uint64_t seed) {
  if (K < 1) throw DimensionError("K must be >= 1");
  if (M <= K) throw DimensionError("M <= K: null space of A^T is trivial");
  std::mt19937_64 rng(derive_seed(seed, 0));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> slope(0.5, 2.0);

  PnlModel model;
  // Full column rank holds with probability one; redraw on the measure-zero failure.
  do {
    model.A.resize(M, K);
    for (int i = 0; i < M; ++i)
      for (int k = 0; k < K; ++k) model.A(i, k) = normal(rng);
  } while (linalg::numeric_rank(model.A, 1e-10) < K);

  const auto& pool = kinds.empty() ? full_catalog() : kinds;
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  for (int m = 0; m < M; ++m) {
    Nonlinearity g;
    g.kind = static_cast<int>(pool.size()) == M ? pool[m] : pool[pick(rng)];
    g.alpha = slope(rng);
    g.beta = 1.0;
    g.gamma = g.kind == NonlinearityKind::ScaledTanhPlusLinear ? 0.1 : 0.0;
    model.g.push_back(g);
  }
  model.validate();
  return model;
}

inline MixtureDataset generate(const PnlModel& model, const LatentSpec& latent, Eigen::Index N, std::uint64_t seed) {
  latent.validate();
  if (latent.K != model.K()) throw DimensionError("latent dimension does not match the model's K");
  if (N < 1) throw DimensionError("N must be >= 1");

  std::mt19937_64 rng(derive_seed(seed, 1));
  Eigen::MatrixXd S(latent.K, N);
  if (latent.kind == LatentKind::IndependentUniform) {
    std::uniform_real_distribution<double> u(latent.lo, latent.hi);
    for (Eigen::Index l = 0; l < N; ++l)
      for (int k = 0; k < latent.K; ++k) S(k, l) = u(rng);
  } else {
    // Flat Dirichlet: normalized unit exponentials.
    std::exponential_distribution<double> e(1.0);
    for (Eigen::Index l = 0; l < N; ++l) {
      double total = 0.0;
      for (int k = 0; k < latent.K; ++k) {
        double v = e(rng);
        while (v <= 0.0) v = e(rng);
        S(k, l) = v;
        total += v;
      }
      S.col(l) /= total;
    }
  }

  MixtureDataset ds;
  ds.Z = model.A * S;
  ds.X.resize(model.M(), N);
  for (Eigen::Index l = 0; l < N; ++l)
    for (Eigen::Index m = 0; m < model.M(); ++m) ds.X(m, l) = model.g[m]((*ds.Z)(m, l));
  ds.S = std::move(S);
  ds.seed = seed;
  return ds;
}

}  // namespace pnlsi
