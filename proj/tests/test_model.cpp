#include "pnlsi/model.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace pnlsi;

namespace {

// Bisection on a monotone increasing function, independent of the library inverse.
double bisect(const Nonlinearity& g, double y, double lo, double hi) {
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) < y ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST(SampleModel, ShapesAndFullRank) {
  const PnlModel m = sample_model(5, 3, {}, 7);
  EXPECT_EQ(m.A.rows(), 5);
  EXPECT_EQ(m.A.cols(), 3);
  EXPECT_EQ(m.g.size(), 5u);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m.A);
  EXPECT_GT(svd.singularValues()(2), 1e-6);
}

TEST(SampleModel, RejectsTrivialNullSpace) {
  EXPECT_THROW(sample_model(2, 2, {}, 0), DimensionError);
  EXPECT_THROW(sample_model(3, 4, {}, 0), DimensionError);
  EXPECT_THROW(sample_model(3, 0, {}, 0), DimensionError);
}

TEST(SampleModel, DeterministicUnderSeed) {
  const PnlModel a = sample_model(5, 3, {}, 7);
  const PnlModel b = sample_model(5, 3, {}, 7);
  EXPECT_EQ(a.A, b.A);
  for (int m = 0; m < 5; ++m) {
    EXPECT_EQ(a.g[m].kind, b.g[m].kind);
    EXPECT_EQ(a.g[m].alpha, b.g[m].alpha);
  }
  const PnlModel c = sample_model(5, 3, {}, 8);
  EXPECT_NE(a.A, c.A);
}

TEST(SampleModel, KindListOfLengthMAssignsInOrder) {
  const std::vector<NonlinearityKind> kinds{NonlinearityKind::ScaledExp, NonlinearityKind::ScaledSigmoid,
                                            NonlinearityKind::ScaledTanhPlusLinear, NonlinearityKind::ScaledExp,
                                            NonlinearityKind::ScaledSigmoid};
  const PnlModel m = sample_model(5, 3, kinds, 3);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(m.g[i].kind, kinds[i]);
}

TEST(Generate, IndependentUniformShapeAndRange) {
  const PnlModel m = sample_model(5, 3, {}, 1);
  const MixtureDataset ds = generate(m, LatentSpec::independent_uniform(3), 10000, 1);
  EXPECT_EQ(ds.X.rows(), 5);
  EXPECT_EQ(ds.X.cols(), 10000);
  ASSERT_TRUE(ds.S && ds.Z);
  EXPECT_GE(ds.S->minCoeff(), -1.0);
  EXPECT_LE(ds.S->maxCoeff(), 1.0);
  // Z = A S and X = g(Z) entrywise.
  EXPECT_LE((*ds.Z - m.A * *ds.S).cwiseAbs().maxCoeff(), 1e-12);
  for (Eigen::Index l = 0; l < 50; ++l)
    for (int i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(ds.X(i, l), m.g[i]((*ds.Z)(i, l)));
}

TEST(Generate, SimplexColumnsSumToOne) {
  const PnlModel m = sample_model(5, 3, {}, 1);
  const MixtureDataset ds = generate(m, LatentSpec::simplex(3), 4, 1);
  for (Eigen::Index l = 0; l < 4; ++l) {
    EXPECT_NEAR(ds.S->col(l).sum(), 1.0, 1e-12);
    EXPECT_GE(ds.S->col(l).minCoeff(), 0.0);
  }
  const MixtureDataset big = generate(m, LatentSpec::simplex(3), 2000, 2);
  for (Eigen::Index l = 0; l < big.N(); ++l) ASSERT_NEAR(big.S->col(l).sum(), 1.0, 1e-12);
}

TEST(Generate, Deterministic) {
  const PnlModel m = sample_model(5, 3, {}, 4);
  EXPECT_EQ(generate(m, LatentSpec::independent_uniform(3), 100, 9).X, generate(m, LatentSpec::independent_uniform(3), 100, 9).X);
}

TEST(Generate, RejectsMismatchedLatent) {
  const PnlModel m = sample_model(5, 3, {}, 4);
  EXPECT_THROW(generate(m, LatentSpec::independent_uniform(2), 10, 0), DimensionError);
  EXPECT_THROW(generate(m, LatentSpec::independent_uniform(3), 0, 0), DimensionError);
}

TEST(Nonlinearity, ExpInverseAtOne) {
  const Nonlinearity g{NonlinearityKind::ScaledExp, 1.0, 1.0, 0.0};
  EXPECT_DOUBLE_EQ(g.inverse(1.0), 0.0);
}

TEST(Nonlinearity, SigmoidRoundTripMatchesBisection) {
  const Nonlinearity g{NonlinearityKind::ScaledSigmoid, 2.0, 1.0, 0.0};
  const double y = g(0.37);
  EXPECT_NEAR(g.inverse(y), 0.37, 1e-9);
  EXPECT_NEAR(bisect(g, y, -10.0, 10.0), 0.37, 1e-9);
}

TEST(Nonlinearity, RoundTripAllKinds) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (const auto kind : full_catalog()) {
    const Nonlinearity g{kind, 1.3, 0.8, kind == NonlinearityKind::ScaledTanhPlusLinear ? 0.1 : 0.0};
    for (int i = 0; i < 100; ++i) {
      const double z = u(rng);
      EXPECT_NEAR(g.inverse(g(z)), z, 1e-9) << to_string(kind);
    }
  }
}

TEST(Nonlinearity, OutOfRangeIsDomainError) {
  const Nonlinearity e{NonlinearityKind::ScaledExp, 1.0, 1.0, 0.0};
  const Nonlinearity s{NonlinearityKind::ScaledSigmoid, 1.0, 2.0, 0.0};
  EXPECT_THROW(e.inverse(-1.0), DomainError);
  EXPECT_THROW(e.inverse(0.0), DomainError);
  EXPECT_THROW(s.inverse(2.0), DomainError);
  EXPECT_THROW(s.inverse(2.5), DomainError);
}

TEST(Nonlinearity, IdentityIsIdentity) {
  const Nonlinearity g = Nonlinearity::identity();
  EXPECT_NO_THROW(g.validate());
  for (double z : {-3.0, -0.2, 0.0, 1.7}) {
    EXPECT_DOUBLE_EQ(g(z), z);
    EXPECT_DOUBLE_EQ(g.inverse(z), z);
  }
}

TEST(Nonlinearity, ValidationRejectsDecreasing) {
  EXPECT_THROW((Nonlinearity{NonlinearityKind::ScaledExp, -1.0, 1.0, 0.0}.validate()), ValidationError);
  EXPECT_THROW((Nonlinearity{NonlinearityKind::ScaledSigmoid, 0.0, 1.0, 0.0}.validate()), ValidationError);
  EXPECT_THROW((Nonlinearity{NonlinearityKind::ScaledTanhPlusLinear, 1.0, 1.0, -0.5}.validate()), ValidationError);
}

TEST(Nonlinearity, StrictlyIncreasingOnSamples) {
  const PnlModel m = sample_model(5, 3, {}, 11);
  for (const auto& g : m.g)
    for (double z = -3.0; z < 3.0; z += 0.01) ASSERT_LT(g(z), g(z + 0.01));
}

TEST(PnlModel, ValidateRejectsRankDeficientA) {
  PnlModel m = sample_model(5, 3, {}, 2);
  m.A.col(2) = m.A.col(0);
  EXPECT_THROW(m.validate(), ValidationError);
}

TEST(Parsing, Kinds) {
  EXPECT_EQ(parse_nonlinearity_kind("exp"), NonlinearityKind::ScaledExp);
  EXPECT_EQ(parse_nonlinearity_kind(to_string(NonlinearityKind::ScaledSigmoid)), NonlinearityKind::ScaledSigmoid);
  EXPECT_THROW(parse_nonlinearity_kind("cubic"), ValidationError);
  EXPECT_EQ(parse_latent_kind("simplex"), LatentKind::Simplex);
  EXPECT_THROW(parse_latent_kind("gaussian"), ValidationError);
}
