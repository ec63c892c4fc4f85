#pragma once

// Block coordinate descent for the null-space criterion
//
//   min_{Q^T Q = I, f, r}  (1/N) sum_l ||Q^T f(x_l)||^2  +  lambda (1/N) sum_l ||x_l - r(f(x_l))||^2
//
// alternating a closed-form Q update (left singular vectors of F = [f(x_1) ... f(x_N)]
// for the D smallest singular values) with mini-batch Adam epochs on the per-channel
// networks f_m and reconstructors r_m. The f networks receive grad(L1 + lambda L2),
// the r networks receive grad(L2).

#include "pnlsi/common.hpp"
#include "pnlsi/model.hpp"
#include "pnlsi/shallow_net.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace pnlsi {

/// Orthonormal M x D basis whose columns should span the null space of A^T.
struct NullBasis {
  Eigen::MatrixXd Q;
  std::vector<std::string> warnings;

  Eigen::Index M() const { return Q.rows(); }
  Eigen::Index D() const { return Q.cols(); }
  double orth_dev() const { return linalg::orthonormality_deviation(Q); }
  double min_abs_entry() const { return Q.size() == 0 ? 0.0 : Q.cwiseAbs().minCoeff(); }
};

enum class NetInit { Random, Identity };

inline std::string to_string(NetInit i) { return i == NetInit::Random ? "random" : "identity"; }

inline NetInit parse_net_init(std::string_view s) {
  if (s == "random") return NetInit::Random;
  if (s == "identity") return NetInit::Identity;
  throw ValidationError("unknown network init '" + std::string(s) + "'");
}

struct TrainConfig {
  int D = 2;
  int R = 256;
  int depth = 1;
  Activation activation = Activation::ReLU;
  double lambda = 1e-4;
  double lr = 2e-4;
  int batch_size = 256;
  int outer_iters = 50;
  int inner_epochs = 1;
  std::uint64_t seed = 0;
  bool use_bias = true;
  NetInit init = NetInit::Random;
  InitScheme init_scheme = InitScheme::UniformFanIn;
  /// Train on per-channel standardized inputs; the affine maps are folded back into
  /// the returned networks, so they always act on raw data.
  bool standardize = true;
  /// Stop when |L_t - L_{t-5}| / L_t falls below this; 0 disables early stopping.
  double early_stop_tol = 1e-5;

  void validate(Eigen::Index M, Eigen::Index N) const {
    if (lambda < 0.0 || !std::isfinite(lambda)) throw ValidationError("lambda must be finite and >= 0");
    if (D < 1 || D >= M) throw ValidationError("D must satisfy 1 <= D < M (D=" + std::to_string(D) + ", M=" + std::to_string(M) + ")");
    if (R < 1 || depth < 1) throw ValidationError("R and depth must be >= 1");
    if (batch_size < 1 || batch_size > N) throw ValidationError("batch size must satisfy 1 <= batch <= N");
    if (outer_iters < 1 || inner_epochs < 0) throw ValidationError("outer_iters must be >= 1 and inner_epochs >= 0");
    if (!(lr > 0.0)) throw ValidationError("learning rate must be > 0");
    if (init == NetInit::Identity && activation != Activation::ReLU)
      throw ValidationError("identity init requires ReLU activation");
    if (early_stop_tol < 0.0) throw ValidationError("early_stop_tol must be >= 0");
  }
};

struct LossValues {
  double L1 = 0.0;
  double L2 = 0.0;
  double L = 0.0;
};

struct TraceRecord {
  int iter = 0;
  double L1 = 0.0;
  double L2 = 0.0;
  double L = 0.0;
  double orth_dev = 0.0;
  double minQ = 0.0;
  double seconds = 0.0;
  // Full-data L1 with f fixed, immediately before and after this iteration's Q update.
  double L1_before_q = 0.0;
  double L1_after_q = 0.0;
};

struct TrainTrace {
  std::vector<TraceRecord> records;
};

struct TrainResult {
  std::vector<ChannelNet> f;
  std::vector<ChannelNet> r;
  NullBasis basis;
  TrainTrace trace;
  std::vector<std::string> warnings;
};

namespace detail {
inline constexpr Eigen::Index kChunk = 4096;
}

/// F = [f(x_1) ... f(x_N)], evaluated in column chunks.
inline Eigen::MatrixXd apply_nets(const std::vector<ChannelNet>& nets, const Eigen::MatrixXd& X) {
  if (static_cast<Eigen::Index>(nets.size()) != X.rows()) throw DimensionError("one network per channel required");
  Eigen::MatrixXd F(X.rows(), X.cols());
  for (Eigen::Index c0 = 0; c0 < X.cols(); c0 += detail::kChunk) {
    const Eigen::Index n = std::min(detail::kChunk, X.cols() - c0);
    for (Eigen::Index m = 0; m < X.rows(); ++m)
      F.row(m).segment(c0, n) = nets[m].forward_batch(X.row(m).segment(c0, n));
  }
  return F;
}

inline double l1_value(const Eigen::MatrixXd& Q, const Eigen::MatrixXd& F) {
  if (Q.rows() != F.rows()) throw DimensionError("Q and F row counts differ");
  return (Q.transpose() * F).squaredNorm() / static_cast<double>(F.cols());
}

inline LossValues loss(const NullBasis& basis, const std::vector<ChannelNet>& f, const std::vector<ChannelNet>& r,
                       const Eigen::MatrixXd& X, double lambda) {
  if (basis.M() != X.rows() || static_cast<Eigen::Index>(r.size()) != X.rows())
    throw DimensionError("loss: dimension mismatch between Q, networks and data");
  const Eigen::MatrixXd F = apply_nets(f, X);
  const Eigen::MatrixXd Xhat = apply_nets(r, F);
  LossValues v;
  v.L1 = l1_value(basis.Q, F);
  v.L2 = (X - Xhat).squaredNorm() / static_cast<double>(X.cols());
  v.L = v.L1 + lambda * v.L2;
  return v;
}

/// Closed-form Q step: left singular vectors of F for its D smallest singular values.
inline NullBasis update_q(const Eigen::MatrixXd& F, int D) {
  const Eigen::Index M = F.rows();
  if (D < 1 || D >= M) throw ValidationError("update_q: D must satisfy 1 <= D < M");
  if (!F.allFinite()) throw NumericError("update_q: F has non-finite entries");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(F, Eigen::ComputeFullU);
  NullBasis nb;
  nb.Q = svd.matrixU().rightCols(D);
  const auto& s = svd.singularValues();
  // Singular values beyond min(M, N) are implicitly zero.
  auto sigma = [&](Eigen::Index i) { return i < s.size() ? s(i) : 0.0; };
  const double smax = sigma(0);
  const double tol = 1e-12 * std::max(smax, 1e-300);
  if (sigma(M - D - 1) <= tol) {
    nb.warnings.push_back("update_q: F has more than D zero singular values; Q chosen by singular-vector order");
  }
  if (nb.min_abs_entry() < 1e-12) nb.warnings.push_back("update_q: Q has an entry with magnitude < 1e-12 (not dense)");
  return nb;
}

/// Snapshot handed to the progress hook after every outer iteration. `f` acts on
/// `X_train`, the (possibly standardized) training coordinates.
struct TrainProgress {
  const TraceRecord& record;
  const std::vector<ChannelNet>& f;
  const Eigen::MatrixXd& X_train;
};

using TrainObserver = std::function<void(const TrainProgress&)>;

namespace detail {

struct ChannelScaling {
  double mean = 0.0;
  double scale = 1.0;
};

// Maps f_std(x_std) to f_raw(x) with x_std = (x - mean) / scale.
inline void fold_input_scaling(ChannelNet& net, const ChannelScaling& s) {
  auto& first = net.layers.front();
  if (net.use_bias) first.b -= first.W.col(0) * (s.mean / s.scale);
  first.W /= s.scale;
}

// Maps r_std(y) (predicting x_std) to r_raw(y) predicting x.
inline void fold_output_scaling(ChannelNet& net, const ChannelScaling& s) {
  auto& last = net.layers.back();
  last.W *= s.scale;
  last.b *= s.scale;
  if (net.use_bias) last.b(0) += s.mean;
}

inline std::string describe_nets(const std::vector<ChannelNet>& nets) {
  std::ostringstream os;
  for (std::size_t m = 0; m < nets.size(); ++m) os << (m ? ", " : "") << nets[m].max_weight_norm();
  return os.str();
}

}  // namespace detail

inline TrainResult train(const MixtureDataset& data, const TrainConfig& cfg, const TrainObserver& observer = {}) {
  const Eigen::Index M = data.X.rows();
  const Eigen::Index N = data.X.cols();
  cfg.validate(M, N);
  if (!data.X.allFinite()) throw ValidationError("training data contains non-finite values");

  // Per-channel affine standardization of the inputs.
  std::vector<detail::ChannelScaling> scaling(M);
  Eigen::MatrixXd X = data.X;
  if (cfg.standardize) {
    for (Eigen::Index m = 0; m < M; ++m) {
      const double mean = cfg.use_bias ? X.row(m).mean() : 0.0;
      const double var = (X.row(m).array() - mean).square().mean();
      const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
      scaling[m] = {mean, sd};
      X.row(m) = (X.row(m).array() - mean) / sd;
    }
  }

  std::mt19937_64 init_rng(derive_seed(cfg.seed, 10));
  TrainResult res;
  for (Eigen::Index m = 0; m < M; ++m) {
    if (cfg.init == NetInit::Identity) {
      res.f.push_back(ChannelNet::identity(cfg.R, cfg.depth, cfg.use_bias));
      res.r.push_back(ChannelNet::identity(cfg.R, cfg.depth, cfg.use_bias));
    } else {
      res.f.push_back(ChannelNet::random(cfg.R, cfg.depth, cfg.activation, cfg.use_bias, init_rng, cfg.init_scheme));
      res.r.push_back(ChannelNet::random(cfg.R, cfg.depth, cfg.activation, cfg.use_bias, init_rng, cfg.init_scheme));
    }
  }
  std::vector<AdamState> adam_f, adam_r;
  for (Eigen::Index m = 0; m < M; ++m) {
    adam_f.emplace_back(res.f[m], cfg.lr);
    adam_r.emplace_back(res.r[m], cfg.lr);
  }

  Eigen::VectorXd l2_weight(M);
  for (Eigen::Index m = 0; m < M; ++m) l2_weight(m) = scaling[m].scale * scaling[m].scale;

  // Losses reported in raw data units: L1 is unaffected by input scaling; each channel's
  // reconstruction error is rescaled by its variance.
  auto full_losses = [&](const Eigen::MatrixXd& Q) {
    const Eigen::MatrixXd F = apply_nets(res.f, X);
    const Eigen::MatrixXd Xhat = apply_nets(res.r, F);
    LossValues v;
    v.L1 = l1_value(Q, F);
    v.L2 = l2_weight.dot((X - Xhat).rowwise().squaredNorm()) / static_cast<double>(N);
    v.L = v.L1 + cfg.lambda * v.L2;
    return v;
  };

  std::mt19937_64 batch_rng(derive_seed(cfg.seed, 11));
  std::vector<Eigen::Index> order(N);
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  std::vector<ForwardCache> fcache(M), rcache(M);
  Eigen::MatrixXd Xb, Yb;
  Eigen::RowVectorXd dy;
  Eigen::MatrixXd Q(M, cfg.D);
  Eigen::MatrixXd QQt;
  bool have_q = false;
  const auto t0 = std::chrono::steady_clock::now();

  for (int it = 0; it < cfg.outer_iters; ++it) {
    TraceRecord rec;
    rec.iter = it;
    {
      const Eigen::MatrixXd F = apply_nets(res.f, X);
      if (!F.allFinite()) throw NumericError("non-finite network output at outer iteration " + std::to_string(it));
      rec.L1_before_q = have_q ? l1_value(Q, F) : std::numeric_limits<double>::infinity();
      NullBasis nb = update_q(F, cfg.D);
      for (auto& w : nb.warnings) res.warnings.push_back("iter " + std::to_string(it) + ": " + w);
      Q = nb.Q;
      have_q = true;
      rec.L1_after_q = l1_value(Q, F);
    }
    QQt = 2.0 * Q * Q.transpose();

    for (int ep = 0; ep < cfg.inner_epochs; ++ep) {
      std::shuffle(order.begin(), order.end(), batch_rng);
      for (Eigen::Index b0 = 0; b0 < N; b0 += cfg.batch_size) {
        const Eigen::Index B = std::min<Eigen::Index>(cfg.batch_size, N - b0);
        Xb.resize(M, B);
        for (Eigen::Index j = 0; j < B; ++j) Xb.col(j) = X.col(order[b0 + j]);
        Yb.resize(M, B);
        for (Eigen::Index m = 0; m < M; ++m) Yb.row(m) = res.f[m].forward_batch(Xb.row(m), fcache[m]);
        // d L1_hat / dY = 2 Q Q^T Y / B
        const Eigen::MatrixXd G1 = (QQt * Yb) / static_cast<double>(B);
        double batch_l2 = 0.0;
        for (Eigen::Index m = 0; m < M; ++m) {
          const Eigen::RowVectorXd xhat = res.r[m].forward_batch(Yb.row(m), rcache[m]);
          const Eigen::RowVectorXd resid = Xb.row(m) - xhat;
          batch_l2 += resid.squaredNorm();
          // d L2_hat / d xhat = -2 (x - xhat) / B
          const Eigen::RowVectorXd up_r = (-2.0 / static_cast<double>(B)) * resid;
          NetGradient gr = res.r[m].backward_batch(rcache[m], up_r, &dy);
          const Eigen::RowVectorXd up_f = G1.row(m) + cfg.lambda * dy;
          NetGradient gf = res.f[m].backward_batch(fcache[m], up_f);
          adam_step(res.r[m], gr, adam_r[m]);
          adam_step(res.f[m], gf, adam_f[m]);
        }
        if (!std::isfinite(batch_l2) || !Yb.allFinite()) {
          std::ostringstream os;
          os << "NaN/Inf in loss at outer iteration " << it << ", epoch " << ep << ", batch offset " << b0;
          for (Eigen::Index m = 0; m < M; ++m)
            if (!Yb.row(m).allFinite() || !res.f[m].finite() || !res.r[m].finite()) {
              os << ", channel " << m;
              break;
            }
          os << "; max weight norms f=[" << detail::describe_nets(res.f) << "] r=[" << detail::describe_nets(res.r) << "]";
          throw NumericError(os.str());
        }
      }
    }

    const LossValues lv = full_losses(Q);
    if (!std::isfinite(lv.L)) {
      throw NumericError("NaN/Inf in full-data loss at outer iteration " + std::to_string(it) + "; max weight norms f=[" +
                         detail::describe_nets(res.f) + "]");
    }
    rec.L1 = lv.L1;
    rec.L2 = lv.L2;
    rec.L = lv.L;
    rec.orth_dev = linalg::orthonormality_deviation(Q);
    rec.minQ = Q.cwiseAbs().minCoeff();
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.trace.records.push_back(rec);
    if (observer) observer(TrainProgress{rec, res.f, X});

    const auto& recs = res.trace.records;
    if (cfg.early_stop_tol > 0.0 && recs.size() > 5) {
      const double now = recs.back().L;
      const double then = recs[recs.size() - 6].L;
      if (now > 0.0 && std::abs(now - then) / now < cfg.early_stop_tol) break;
    }
  }

  if (cfg.standardize) {
    for (Eigen::Index m = 0; m < M; ++m) {
      detail::fold_input_scaling(res.f[m], scaling[m]);
      detail::fold_output_scaling(res.r[m], scaling[m]);
    }
  }
  res.basis.Q = Q;
  if (res.basis.min_abs_entry() < 1e-12)
    res.warnings.push_back("final Q has an entry with magnitude < 1e-12 (not dense)");
  return res;
}

}  // namespace pnlsi
