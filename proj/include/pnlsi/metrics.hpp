#pragma once

// Nonlinearity-removal diagnostics: affine fits of the compositions h_m = f_m o g_m
// and the distance between recovered and true latent row spaces.

#include "pnlsi/common.hpp"
#include "pnlsi/model.hpp"
#include "pnlsi/shallow_net.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace pnlsi {

inline constexpr int kDefaultAffineGrid = 201;
inline constexpr double kAffineR2Threshold = 0.98;

struct ChannelAffineFit {
  double c = 0.0;  // slope
  double d = 0.0;  // intercept
  double r2 = 0.0;
  double max_abs_residual = 0.0;
  /// Mean squared central-difference second derivative of h over the grid interior.
  double second_derivative_proxy = 0.0;
  /// h is constant on the grid; r2 is meaningless and left at 0.
  bool degenerate = false;
  Eigen::VectorXd grid;
  Eigen::VectorXd values;

  bool affine(double threshold = kAffineR2Threshold) const { return !degenerate && r2 >= threshold; }
};

struct AffineFitResult {
  std::vector<ChannelAffineFit> channels;

  bool all_affine(double threshold = kAffineR2Threshold) const {
    return std::all_of(channels.begin(), channels.end(), [&](const auto& c) { return c.affine(threshold); });
  }
  double min_r2() const {
    double v = 1.0;
    for (const auto& c : channels) v = std::min(v, c.degenerate ? -std::numeric_limits<double>::infinity() : c.r2);
    return v;
  }
};

inline Eigen::VectorXd uniform_grid(double lo, double hi, int n) {
  return Eigen::VectorXd::LinSpaced(n, lo, hi);
}

/// Least-squares fit of c z + d to h sampled on a uniform grid over [lo, hi].
template <class Fn>
ChannelAffineFit affine_fit_function(Fn&& h, double lo, double hi, int grid_size = kDefaultAffineGrid) {
  if (grid_size < 3) throw ValidationError("affine_fit: grid_size must be >= 3");
  if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) throw ValidationError("affine_fit: degenerate z range");
  ChannelAffineFit out;
  out.grid = uniform_grid(lo, hi, grid_size);
  out.values.resize(grid_size);
  for (int i = 0; i < grid_size; ++i) out.values(i) = h(out.grid(i));
  if (!out.values.allFinite()) throw NumericError("affine_fit: composition is not finite on the grid");

  const double zm = out.grid.mean();
  const double hm = out.values.mean();
  const Eigen::ArrayXd dz = out.grid.array() - zm;
  const Eigen::ArrayXd dh = out.values.array() - hm;
  const double szz = dz.square().sum();
  const double shh = dh.square().sum();
  out.c = (dz * dh).sum() / szz;
  out.d = hm - out.c * zm;
  const Eigen::ArrayXd resid = out.values.array() - (out.c * out.grid.array() + out.d);
  out.max_abs_residual = resid.abs().maxCoeff();
  const double scale = std::max(out.values.cwiseAbs().maxCoeff(), 1e-300);
  if (shh <= 1e-24 * scale * scale * grid_size) {
    out.degenerate = true;
    out.r2 = 0.0;
  } else {
    out.r2 = 1.0 - resid.square().sum() / shh;
  }

  const double step = (hi - lo) / (grid_size - 1);
  double acc = 0.0;
  for (int i = 1; i + 1 < grid_size; ++i) {
    const double d2 = (out.values(i + 1) - 2.0 * out.values(i) + out.values(i - 1)) / (step * step);
    acc += d2 * d2;
  }
  out.second_derivative_proxy = acc / (grid_size - 2);
  return out;
}

/// Fit of h(z) = f(g(z)) over z in [lo, hi].
inline ChannelAffineFit affine_fit(const ChannelNet& f, const Nonlinearity& g, double lo, double hi,
                                   int grid_size = kDefaultAffineGrid) {
  return affine_fit_function([&](double z) { return f.forward(g(z)); }, lo, hi, grid_size);
}

/// Per-channel fits over the empirical range of each row of Z = A S.
inline AffineFitResult affine_fit_all(const std::vector<ChannelNet>& f, const PnlModel& model, const Eigen::MatrixXd& Z,
                                      int grid_size = kDefaultAffineGrid) {
  if (static_cast<Eigen::Index>(f.size()) != model.M() || Z.rows() != model.M())
    throw DimensionError("affine_fit_all: channel count mismatch");
  AffineFitResult out;
  for (Eigen::Index m = 0; m < model.M(); ++m)
    out.channels.push_back(affine_fit(f[m], model.g[m], Z.row(m).minCoeff(), Z.row(m).maxCoeff(), grid_size));
  return out;
}

struct SubspaceDistanceResult {
  double distance = 0.0;                 // sin of the largest principal angle, in [0, 1]
  std::vector<double> principal_angles;  // radians, ascending
  int K_used = 0;
};

namespace detail {

// Orthonormal N x K basis of the top-K right singular subspace of the row-centered matrix.
inline Eigen::MatrixXd centered_row_space(const Eigen::MatrixXd& X, int K, const char* side, double rel_tol) {
  const Eigen::MatrixXd Xc = X.colwise() - X.rowwise().mean();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(Xc.transpose(), Eigen::ComputeThinU);
  const auto& s = svd.singularValues();
  if (s.size() < K || s(0) <= 0.0 || s(K - 1) <= rel_tol * s(0))
    throw ValidationError(std::string("subspace_distance: ") + side + " has centered rank below K");
  return svd.matrixU().leftCols(K);
}

}  // namespace detail

/// Distance between the centered row spaces of S_true (K x N) and F_learned (M x N),
/// using the top-K right singular subspace of each: ||P1 - P2||_2 = sin(theta_max).
inline SubspaceDistanceResult subspace_distance(const Eigen::MatrixXd& S_true, const Eigen::MatrixXd& F_learned, int K,
                                                double rank_tol = 1e-10) {
  if (S_true.cols() != F_learned.cols()) throw DimensionError("subspace_distance: sample counts differ");
  if (K < 1 || K > S_true.rows() || K > F_learned.rows()) throw DimensionError("subspace_distance: invalid K");
  if (S_true.cols() < std::max(S_true.rows(), F_learned.rows()))
    throw DimensionError("subspace_distance: need N >= max(M, K)");
  const Eigen::MatrixXd U1 = detail::centered_row_space(S_true, K, "S_true", rank_tol);
  const Eigen::MatrixXd U2 = detail::centered_row_space(F_learned, K, "F_learned", rank_tol);

  // Sines of the principal angles are the singular values of (I - U1 U1^T) U2.
  const Eigen::MatrixXd resid = U2 - U1 * (U1.transpose() * U2);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(resid);
  SubspaceDistanceResult out;
  out.K_used = K;
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
    out.principal_angles.push_back(std::asin(std::clamp(svd.singularValues()(i), 0.0, 1.0)));
  std::sort(out.principal_angles.begin(), out.principal_angles.end());
  out.distance = std::clamp(svd.singularValues().size() ? svd.singularValues()(0) : 0.0, 0.0, 1.0);
  return out;
}

}  // namespace pnlsi
