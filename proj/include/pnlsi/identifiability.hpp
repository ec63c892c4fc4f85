#pragma once

// Identifiability analysis for the null-space criterion.
//
// Second-order (cross) derivatives of Q^T h(A s) = 0 w.r.t. the locally free latent
// components give the linear system (Q^T kr B) h''(A s) = 0, where B stacks the
// element-wise products a_i * a_j (i <= j) of the free columns of A. The compositions
// h_m are forced to be affine when Q^T kr B has full column rank M. By the Kruskal-rank
// lemma this holds when krank(Q^T) + krank(B) >= M + 1, which the dimension count
// Kf (Kf + 1) / 2 >= M guarantees almost surely.

#include "pnlsi/common.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace pnlsi {

/// Column-wise Kronecker product of U (a x m) and V (b x m).
inline Eigen::MatrixXd khatri_rao(const Eigen::MatrixXd& U, const Eigen::MatrixXd& V) {
  if (U.cols() != V.cols()) throw DimensionError("khatri_rao: column counts differ");
  const Eigen::Index a = U.rows(), b = V.rows();
  Eigen::MatrixXd out(a * b, U.cols());
  for (Eigen::Index j = 0; j < U.cols(); ++j)
    for (Eigen::Index i = 0; i < a; ++i) out.col(j).segment(i * b, b) = U(i, j) * V.col(j);
  return out;
}

/// Rows (a_k * a_k)^T for the free columns in order, then (a_i * a_j)^T for i < j
/// in lexicographic order. Result is (Kf (Kf + 1) / 2) x M.
inline Eigen::MatrixXd build_b_matrix(const Eigen::MatrixXd& A, const std::vector<int>& free_idx) {
  const int kf = static_cast<int>(free_idx.size());
  if (kf < 1) throw ValidationError("build_b_matrix: need at least one free column");
  for (std::size_t i = 0; i < free_idx.size(); ++i) {
    if (free_idx[i] < 0 || free_idx[i] >= A.cols())
      throw ValidationError("build_b_matrix: free index " + std::to_string(free_idx[i]) + " out of range");
    for (std::size_t j = 0; j < i; ++j)
      if (free_idx[i] == free_idx[j]) throw ValidationError("build_b_matrix: duplicate free index");
  }
  Eigen::MatrixXd B(kf * (kf + 1) / 2, A.rows());
  Eigen::Index row = 0;
  for (int k = 0; k < kf; ++k) B.row(row++) = A.col(free_idx[k]).cwiseAbs2().transpose();
  for (int i = 0; i < kf; ++i)
    for (int j = i + 1; j < kf; ++j)
      B.row(row++) = A.col(free_idx[i]).cwiseProduct(A.col(free_idx[j])).transpose();
  return B;
}

/// Kf (Kf + 1) / 2 >= M.
inline bool check_condition(int k_free, int M) {
  return static_cast<long long>(k_free) * (k_free + 1) / 2 >= M;
}

inline Eigen::VectorXd singular_values(const Eigen::MatrixXd& X) {
  if (X.size() == 0) return {};
  return Eigen::JacobiSVD<Eigen::MatrixXd>(X).singularValues();
}

inline constexpr int kMaxExhaustiveColumns = 12;

struct KruskalRank {
  int value = 0;
  bool exhaustive = true;
};

namespace detail {

inline int rank_abs(const Eigen::MatrixXd& X, double abs_thresh) {
  const Eigen::VectorXd s = singular_values(X);
  int r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > abs_thresh) ++r;
  return r;
}

inline Eigen::MatrixXd select_columns(const Eigen::MatrixXd& X, const std::vector<int>& cols) {
  Eigen::MatrixXd out(X.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(j) = X.col(cols[j]);
  return out;
}

// Visits every size-t subset of {0..n-1}; stops when visit returns false.
template <class Visit>
bool for_each_subset(int n, int t, Visit&& visit) {
  std::vector<int> idx(t);
  std::iota(idx.begin(), idx.end(), 0);
  while (true) {
    if (!visit(idx)) return false;
    int i = t - 1;
    while (i >= 0 && idx[i] == n - t + i) --i;
    if (i < 0) return true;
    ++idx[i];
    for (int j = i + 1; j < t; ++j) idx[j] = idx[j - 1] + 1;
  }
}

inline double krank_threshold(const Eigen::MatrixXd& X, double tol) {
  const Eigen::VectorXd s = singular_values(X);
  return tol * (s.size() ? s(0) : 0.0);
}

}  // namespace detail

/// Largest t such that every t-column subset of X has numeric rank t. Singular values
/// below tol * sigma_max(X) count as zero. Exhaustive; at most 12 columns.
inline int kruskal_rank(const Eigen::MatrixXd& X, double tol = 1e-8) {
  if (X.size() == 0) throw ValidationError("kruskal_rank: empty matrix");
  if (!(tol > 0.0)) throw ValidationError("kruskal_rank: tol must be > 0");
  const int n = static_cast<int>(X.cols());
  if (n > kMaxExhaustiveColumns)
    throw SizeError("kruskal_rank: " + std::to_string(n) + " columns exceeds the exhaustive limit of " +
                    std::to_string(kMaxExhaustiveColumns) + "; use kruskal_rank_sampled");
  const double thresh = detail::krank_threshold(X, tol);
  const int cap = static_cast<int>(std::min(X.rows(), X.cols()));
  int krank = 0;
  for (int t = 1; t <= cap; ++t) {
    const bool all_independent = detail::for_each_subset(
        n, t, [&](const std::vector<int>& cols) { return detail::rank_abs(detail::select_columns(X, cols), thresh) == t; });
    if (!all_independent) break;
    krank = t;
  }
  return krank;
}

/// Randomized variant for wide matrices: checks `samples` random subsets per size. The
/// result is an upper bound on the Kruskal rank (a failing subset is a certificate);
/// flagged as non-exhaustive.
inline KruskalRank kruskal_rank_sampled(const Eigen::MatrixXd& X, double tol, int samples, std::uint64_t seed) {
  if (X.size() == 0) throw ValidationError("kruskal_rank: empty matrix");
  const int n = static_cast<int>(X.cols());
  const double thresh = detail::krank_threshold(X, tol);
  const int cap = static_cast<int>(std::min(X.rows(), X.cols()));
  std::mt19937_64 rng(seed);
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  KruskalRank out{0, false};
  for (int t = 1; t <= cap; ++t) {
    bool ok = true;
    for (int s = 0; s < samples && ok; ++s) {
      std::shuffle(all.begin(), all.end(), rng);
      std::vector<int> cols(all.begin(), all.begin() + t);
      ok = detail::rank_abs(detail::select_columns(X, cols), thresh) == t;
    }
    if (!ok) break;
    out.value = t;
  }
  return out;
}

inline KruskalRank kruskal_rank_auto(const Eigen::MatrixXd& X, double tol, std::uint64_t seed = 0) {
  if (X.cols() <= kMaxExhaustiveColumns) return {kruskal_rank(X, tol), true};
  return kruskal_rank_sampled(X, tol, 2000, seed);
}

struct IdentReport {
  int M = 0;
  int K = 0;
  int K_free = 0;
  int D = 0;
  std::vector<int> free_idx;
  Eigen::MatrixXd B;
  int krank_B = 0;
  int krank_Qt = 0;
  bool krank_exhaustive = true;
  int rank_QtKRB = 0;
  double sigma_min = 0.0;
  bool condition_ok = false;
  double tol = 1e-8;
};

/// Full identifiability report for mixing matrix A and orthonormal basis Q (M x D).
inline IdentReport verify_rank(const Eigen::MatrixXd& A, const Eigen::MatrixXd& Q, const std::vector<int>& free_idx,
                               double tol = 1e-8) {
  if (Q.rows() != A.rows()) throw DimensionError("verify_rank: Q and A must have the same row count M");
  if (linalg::orthonormality_deviation(Q) > 1e-8) throw ValidationError("verify_rank: Q is not orthonormal");
  IdentReport rep;
  rep.M = static_cast<int>(A.rows());
  rep.K = static_cast<int>(A.cols());
  rep.K_free = static_cast<int>(free_idx.size());
  rep.D = static_cast<int>(Q.cols());
  rep.free_idx = free_idx;
  rep.tol = tol;
  rep.B = build_b_matrix(A, free_idx);
  rep.condition_ok = check_condition(rep.K_free, rep.M);

  const Eigen::MatrixXd Qt = Q.transpose();
  const KruskalRank kb = kruskal_rank_auto(rep.B, tol);
  const KruskalRank kq = kruskal_rank_auto(Qt, tol);
  rep.krank_B = kb.value;
  rep.krank_Qt = kq.value;
  rep.krank_exhaustive = kb.exhaustive && kq.exhaustive;

  const Eigen::MatrixXd KR = khatri_rao(Qt, rep.B);
  rep.rank_QtKRB = linalg::numeric_rank(KR, tol);
  const Eigen::VectorXd s = singular_values(KR);
  rep.sigma_min = s.size() >= rep.M ? s(rep.M - 1) : 0.0;
  return rep;
}

/// Orthonormal basis of N(A^T) (M x (M - rank A)).
inline Eigen::MatrixXd null_space_of_transpose(const Eigen::MatrixXd& A, double tol = 1e-10) {
  const int r = linalg::numeric_rank(A, tol);
  return linalg::left_null_space(A, A.rows() - r);
}

/// Quantities entering the Rademacher and finite-sample bounds.
struct BoundInputs {
  double nu = 0.0;   // realization gap
  double C_d = 1.0;  // bound on 4th derivatives of q^T h(A s)
  double C_x = 1.0;  // |x_m| <= C_x
  double B_w = 1.0;  // ||w_i||_2 <= B_w
  double R = 1.0;    // hidden width
  double N = 1.0;    // samples
  double M = 1.0;
  double D = 1.0;
  double delta = 0.05;

  void validate() const {
    if (!(nu >= 0.0)) throw ValidationError("bound inputs: nu must be >= 0");
    for (double v : {C_d, C_x, B_w, R, N, M, D})
      if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError("bound inputs must be positive and finite");
    if (!(delta > 0.0 && delta < 1.0)) throw ValidationError("bound inputs: delta must lie in (0, 1)");
  }
};

/// 2 D M B^4 C_x^2 sqrt(R / N).
inline double rademacher_bound(const BoundInputs& in) {
  in.validate();
  const double b2 = in.B_w * in.B_w;
  return 2.0 * in.D * in.M * b2 * b2 * in.C_x * in.C_x * std::sqrt(in.R / in.N);
}

/// Finite-sample bound on E||h''(A s)||^2, up to an absolute constant:
///   C_d sqrt(M) nu / sigma^2 + C_d B^2 C_x (sqrt(R) + sqrt(2 ln(4/delta)))^(1/2) / (sigma^2 N^(1/4)).
inline double finite_sample_bound(const BoundInputs& in, double sigma_min) {
  in.validate();
  if (!(sigma_min > 0.0)) throw ValidationError("finite_sample_bound: sigma_min must be > 0");
  const double s2 = sigma_min * sigma_min;
  const double approx = in.C_d * std::sqrt(in.M) * in.nu / s2;
  const double est = in.C_d * in.B_w * in.B_w * in.C_x *
                     std::sqrt(std::sqrt(in.R) + std::sqrt(2.0 * std::log(4.0 / in.delta))) /
                     (s2 * std::pow(in.N, 0.25));
  return approx + est;
}

}  // namespace pnlsi
