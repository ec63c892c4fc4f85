#include "pnlsi/metrics.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace pnlsi;

namespace {

Eigen::MatrixXd random_matrix(int r, int c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd X(r, c);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = n(rng);
  return X;
}

// sin(theta_max) from the cosines: singular values of U1^T U2 on centered, orthonormalized rows.
double oracle_distance(const Eigen::MatrixXd& S, const Eigen::MatrixXd& F, int K) {
  auto basis = [K](const Eigen::MatrixXd& X) {
    const Eigen::MatrixXd Xc = X.colwise() - X.rowwise().mean();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Xc.transpose(), Eigen::ComputeThinU);
    return Eigen::MatrixXd(svd.matrixU().leftCols(K));
  };
  const Eigen::MatrixXd U1 = basis(S), U2 = basis(F);
  const double cmin = Eigen::JacobiSVD<Eigen::MatrixXd>(U1.transpose() * U2).singularValues().minCoeff();
  return std::sqrt(std::max(0.0, 1.0 - cmin * cmin));
}

}  // namespace

TEST(AffineFit, AffineInput) {
  const ChannelAffineFit fit = affine_fit_function([](double z) { return 2.0 * z + 1.0; }, -1.0, 1.0);
  EXPECT_NEAR(fit.c, 2.0, 1e-12);
  EXPECT_NEAR(fit.d, 1.0, 1e-12);
  EXPECT_LE(fit.max_abs_residual, 1e-12);
  EXPECT_NEAR(fit.r2, 1.0, 1e-12);
  EXPECT_LE(fit.second_derivative_proxy, 1e-12);
}

TEST(AffineFit, ArbitraryAffineHasZeroResidual) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int t = 0; t < 20; ++t) {
    const double a = u(rng), b = u(rng);
    const ChannelAffineFit fit = affine_fit_function([&](double z) { return a * z + b; }, -2.0, 3.0, 57);
    EXPECT_LE(fit.max_abs_residual, 1e-12 * std::max(1.0, std::abs(a) + std::abs(b)));
  }
}

TEST(AffineFit, SquareMatchesLeastSquaresOracle) {
  const int n = 101;
  const ChannelAffineFit fit = affine_fit_function([](double z) { return z * z; }, -1.0, 1.0, n);
  // Normal equations solved directly on the same grid.
  Eigen::MatrixXd D(n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    const double z = -1.0 + 2.0 * i / (n - 1);
    D(i, 0) = z;
    D(i, 1) = 1.0;
    y(i) = z * z;
  }
  const Eigen::Vector2d coef = (D.transpose() * D).ldlt().solve(D.transpose() * y);
  const Eigen::VectorXd res = y - D * coef;
  const double r2 = 1.0 - res.squaredNorm() / (y.array() - y.mean()).square().sum();
  EXPECT_NEAR(fit.c, coef(0), 1e-12);
  EXPECT_NEAR(fit.d, coef(1), 1e-12);
  EXPECT_NEAR(fit.r2, r2, 1e-12);
  EXPECT_NEAR(fit.c, 0.0, 1e-12);
  EXPECT_NEAR(fit.d, 1.0 / 3.0, 0.01);
  EXPECT_NEAR(fit.second_derivative_proxy, 4.0, 1e-6);
}

TEST(AffineFit, ExactInverseGivesIdentityComposition) {
  const Nonlinearity g{NonlinearityKind::ScaledExp, 1.0, 1.0, 0.0};
  const ChannelAffineFit fit = affine_fit_function([&](double z) { return g.inverse(g(z)); }, -1.0, 1.0);
  EXPECT_NEAR(fit.r2, 1.0, 1e-12);
  EXPECT_LE(fit.max_abs_residual, 1e-9);
  EXPECT_NEAR(fit.c, 1.0, 1e-9);
  EXPECT_NEAR(fit.d, 0.0, 1e-9);
}

TEST(AffineFit, IdentityNetOnIdentityDistortion) {
  const ChannelAffineFit fit = affine_fit(ChannelNet::identity(4, 1, true), Nonlinearity::identity(), -2.0, 2.0);
  EXPECT_NEAR(fit.c, 1.0, 1e-12);
  EXPECT_TRUE(fit.affine());
}

TEST(AffineFit, ConstantIsDegenerate) {
  const ChannelAffineFit fit = affine_fit_function([](double) { return 3.0; }, 0.0, 1.0);
  EXPECT_TRUE(fit.degenerate);
  EXPECT_FALSE(fit.affine());
  EXPECT_FALSE(std::isnan(fit.r2));
}

TEST(AffineFit, Preconditions) {
  EXPECT_THROW(affine_fit_function([](double z) { return z; }, 0.0, 1.0, 2), ValidationError);
  EXPECT_THROW(affine_fit_function([](double z) { return z; }, 1.0, 1.0), ValidationError);
}

TEST(SubspaceDistance, AffineMixingIsInvisible) {
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd S = random_matrix(3, 500, rng);
  const Eigen::MatrixXd C = random_matrix(5, 3, rng);
  Eigen::VectorXd d = random_matrix(5, 1, rng);
  const Eigen::MatrixXd F = (C * S).colwise() + d;
  EXPECT_LE(subspace_distance(S, F, 3).distance, 1e-8);
}

TEST(SubspaceDistance, OrthogonalRowSpacesGiveOne) {
  const int N = 12, K = 2;
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(K, N);
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(K, N);
  // Disjoint supports, each row summing to zero so centering is a no-op.
  S(0, 0) = 1; S(0, 1) = -1;
  S(1, 2) = 1; S(1, 3) = -1;
  F(0, 6) = 1; F(0, 7) = -1;
  F(1, 8) = 1; F(1, 9) = -1;
  EXPECT_NEAR(subspace_distance(S, F, K).distance, 1.0, 1e-12);
}

TEST(SubspaceDistance, MatchesPrincipalAngleOracle) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 10; ++t) {
    const Eigen::MatrixXd S = random_matrix(3, 10, rng);
    const Eigen::MatrixXd F = random_matrix(3, 10, rng);
    const auto r = subspace_distance(S, F, 3);
    EXPECT_NEAR(r.distance, oracle_distance(S, F, 3), 1e-10);
    EXPECT_NEAR(std::sin(r.principal_angles.back()), r.distance, 1e-12);
  }
}

TEST(SubspaceDistance, SelfSymmetricAndBounded) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 10; ++t) {
    const Eigen::MatrixXd X = random_matrix(3, 40, rng);
    const Eigen::MatrixXd Y = random_matrix(3, 40, rng);
    EXPECT_LE(subspace_distance(X, X, 3).distance, 1e-12);
    const double a = subspace_distance(X, Y, 3).distance;
    EXPECT_NEAR(a, subspace_distance(Y, X, 3).distance, 1e-12);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
}

TEST(SubspaceDistance, RankDeficiencyNamesSide) {
  std::mt19937_64 rng(5);
  const Eigen::MatrixXd S = random_matrix(3, 50, rng);
  Eigen::MatrixXd F = random_matrix(5, 50, rng);
  F.bottomRows(3).setZero();
  try {
    subspace_distance(S, F, 3);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("F_learned"), std::string::npos);
  }
  Eigen::MatrixXd S2 = S;
  S2.row(2) = S2.row(0);
  try {
    subspace_distance(S2, random_matrix(5, 50, rng), 3);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("S_true"), std::string::npos);
  }
}

TEST(SubspaceDistance, DimensionErrors) {
  std::mt19937_64 rng(6);
  EXPECT_THROW(subspace_distance(random_matrix(3, 10, rng), random_matrix(5, 11, rng), 3), DimensionError);
  EXPECT_THROW(subspace_distance(random_matrix(3, 10, rng), random_matrix(5, 10, rng), 4), DimensionError);
}
