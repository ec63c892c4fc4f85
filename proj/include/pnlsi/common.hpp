#pragma once

// Shared error types, seeding helpers and small dense linear-algebra utilities.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace pnlsi {

inline constexpr const char* kVersion = "0.3.1";

/// Invalid input: wrong dimensions, out-of-range arguments, bad configuration.
/// The CLI maps it to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DomainError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Exhaustive search would be too large for the requested input.
class SizeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Non-finite values produced during a computation. Exit code 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// splitmix64 finalizer, used to derive independent seeds from (seed, stream).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace linalg {

/// Number of singular values above rel_tol * sigma_max.
inline int numeric_rank(const Eigen::MatrixXd& X, double rel_tol) {
  if (X.size() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(X);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  const double thresh = rel_tol * s(0);
  int r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > thresh) ++r;
  return r;
}

/// Orthonormal basis of the null space of X^T (the left null space of X).
/// `dim` columns are returned: the left singular vectors of the smallest singular values.
inline Eigen::MatrixXd left_null_space(const Eigen::MatrixXd& X, Eigen::Index dim) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeFullU);
  return svd.matrixU().rightCols(dim);
}

/// max |Q^T Q - I|.
inline double orthonormality_deviation(const Eigen::MatrixXd& Q) {
  const Eigen::MatrixXd G = Q.transpose() * Q - Eigen::MatrixXd::Identity(Q.cols(), Q.cols());
  return G.cwiseAbs().maxCoeff();
}

inline bool all_finite(const Eigen::MatrixXd& X) { return X.allFinite(); }

}  // namespace linalg
}  // namespace pnlsi
