#pragma once

// Seeded experiment drivers: single scenarios (independent / simplex latents, linear
// sanity check), (R, N) sweeps and the JSON experiment configuration.

#include "pnlsi/bcd_trainer.hpp"
#include "pnlsi/common.hpp"
#include "pnlsi/identifiability.hpp"
#include "pnlsi/io.hpp"
#include "pnlsi/metrics.hpp"
#include "pnlsi/model.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace pnlsi {

enum class Scenario { Independent, Simplex, LinearSanity };

inline std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::Independent: return "independent";
    case Scenario::Simplex: return "simplex";
    case Scenario::LinearSanity: return "linear_sanity";
  }
  return "unknown";
}

inline Scenario parse_scenario(std::string_view s) {
  if (s == "independent") return Scenario::Independent;
  if (s == "simplex") return Scenario::Simplex;
  if (s == "linear_sanity") return Scenario::LinearSanity;
  throw ValidationError("unknown scenario '" + std::string(s) + "' (expected independent|simplex|linear_sanity)");
}

struct ExperimentConfig {
  Scenario scenario = Scenario::Independent;
  int M = 5;
  int K = 3;
  Eigen::Index N = 10000;
  int trials = 5;
  std::uint64_t seed = 0;
  /// Explicit per-trial seeds; derived from `seed` when empty.
  std::vector<std::uint64_t> seeds;
  TrainConfig train;
  int grid_size = kDefaultAffineGrid;
  double r2_threshold = kAffineR2Threshold;
  int threads = 1;
  std::string out_dir;

  /// Scenario defaults: D = M - K (independent, linear sanity) or M - K + 1 (simplex).
  static ExperimentConfig defaults(Scenario s, int M = 5, int K = 3) {
    ExperimentConfig c;
    c.scenario = s;
    c.M = M;
    c.K = K;
    c.train.D = s == Scenario::Simplex ? M - K + 1 : M - K;
    c.train.outer_iters = kDefaultOuterIters;
    c.train.inner_epochs = kDefaultInnerEpochs;
    c.train.batch_size = kDefaultBatch;
    if (s == Scenario::LinearSanity) {
      c.train.init = NetInit::Identity;
      c.train.standardize = false;
      c.train.outer_iters = 5;
    }
    return c;
  }

  static constexpr int kDefaultOuterIters = 200;
  static constexpr int kDefaultInnerEpochs = 1;
  static constexpr int kDefaultBatch = 32;

  LatentSpec latent() const {
    return scenario == Scenario::Simplex ? LatentSpec::simplex(K) : LatentSpec::independent_uniform(K);
  }

  std::uint64_t trial_seed(int t) const {
    return seeds.empty() ? derive_seed(seed, 1000 + static_cast<std::uint64_t>(t)) : seeds.at(t);
  }

  void validate() const {
    if (K < 1 || M <= K) throw ValidationError("config: need M > K >= 1");
    if (trials < 1) throw ValidationError("config: trials must be >= 1");
    if (!seeds.empty() && static_cast<int>(seeds.size()) != trials)
      throw ValidationError("config: seeds must list exactly `trials` values");
    if (N < M) throw ValidationError("config: N must be >= M");
    if (grid_size < 3) throw ValidationError("config: grid_size must be >= 3");
    if (threads < 1) throw ValidationError("config: threads must be >= 1");
    train.validate(M, N);
  }
};

// ---------------------------------------------------------------- config file

inline json config_to_json(const ExperimentConfig& c) {
  json j;
  j["scenario"] = to_string(c.scenario);
  j["M"] = c.M;
  j["K"] = c.K;
  j["N"] = c.N;
  j["trials"] = c.trials;
  j["seed"] = c.seed;
  j["seeds"] = c.seeds;
  j["D"] = c.train.D;
  j["R"] = c.train.R;
  j["depth"] = c.train.depth;
  j["activation"] = to_string(c.train.activation);
  j["lambda"] = c.train.lambda;
  j["lr"] = c.train.lr;
  j["batch_size"] = c.train.batch_size;
  j["outer_iters"] = c.train.outer_iters;
  j["inner_epochs"] = c.train.inner_epochs;
  j["use_bias"] = c.train.use_bias;
  j["init"] = to_string(c.train.init);
  j["init_scheme"] = to_string(c.train.init_scheme);
  j["standardize"] = c.train.standardize;
  j["early_stop_tol"] = c.train.early_stop_tol;
  j["grid_size"] = c.grid_size;
  j["r2_threshold"] = c.r2_threshold;
  j["threads"] = c.threads;
  j["out_dir"] = c.out_dir;
  return j;
}

/// Strict parse: unknown keys are rejected, missing keys take scenario defaults.
inline ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("config: top level must be a JSON object");
  static const std::set<std::string> known{
      "scenario", "M", "K", "N", "trials", "seed", "seeds", "D", "R", "depth", "activation", "lambda", "lr",
      "batch_size", "outer_iters", "inner_epochs", "use_bias", "init", "init_scheme", "standardize",
      "early_stop_tol", "grid_size", "r2_threshold", "threads", "out_dir"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ValidationError("config: unknown key '" + key + "'");

  std::string current;
  try {
    current = "scenario";
    const Scenario s = parse_scenario(j.value("scenario", std::string("independent")));
    current = "M";
    const int M = j.value("M", 5);
    current = "K";
    const int K = j.value("K", 3);
    ExperimentConfig c = ExperimentConfig::defaults(s, M, K);
    auto get = [&](const char* key, auto& dst) {
      current = key;
      if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
    };
    get("N", c.N);
    get("trials", c.trials);
    get("seed", c.seed);
    get("seeds", c.seeds);
    get("D", c.train.D);
    get("R", c.train.R);
    get("depth", c.train.depth);
    current = "activation";
    if (j.contains("activation")) c.train.activation = parse_activation(j.at("activation").get<std::string>());
    get("lambda", c.train.lambda);
    get("lr", c.train.lr);
    get("batch_size", c.train.batch_size);
    get("outer_iters", c.train.outer_iters);
    get("inner_epochs", c.train.inner_epochs);
    get("use_bias", c.train.use_bias);
    current = "init";
    if (j.contains("init")) c.train.init = parse_net_init(j.at("init").get<std::string>());
    current = "init_scheme";
    if (j.contains("init_scheme")) c.train.init_scheme = parse_init_scheme(j.at("init_scheme").get<std::string>());
    get("standardize", c.train.standardize);
    get("early_stop_tol", c.train.early_stop_tol);
    get("grid_size", c.grid_size);
    get("r2_threshold", c.r2_threshold);
    get("threads", c.threads);
    get("out_dir", c.out_dir);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ValidationError("config: bad value for key '" + current + "': " + e.what());
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  try {
    return config_from_json(io::read_json(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline void write_config(const std::filesystem::path& path, const ExperimentConfig& c) {
  json j = config_to_json(c);
  io::write_json(path, j);
}

// ---------------------------------------------------------------- scenario

struct TrialSummary {
  int trial = 0;
  std::uint64_t seed = 0;
  std::vector<double> r2;
  std::vector<double> second_derivative_proxy;
  bool all_affine = false;
  double subspace_distance = 0.0;
  std::vector<double> principal_angles;
  LossValues final_loss;
  IdentReport ident;
  double max_weight_norm = 0.0;
  std::vector<std::string> warnings;
};

struct ScenarioSummary {
  ExperimentConfig config;
  std::vector<TrialSummary> trials;

  double mean_distance() const {
    double s = 0.0;
    for (const auto& t : trials) s += t.subspace_distance;
    return trials.empty() ? 0.0 : s / static_cast<double>(trials.size());
  }
  /// Population standard deviation of the per-trial distances.
  double std_distance() const {
    const double mu = mean_distance();
    double s = 0.0;
    for (const auto& t : trials) s += (t.subspace_distance - mu) * (t.subspace_distance - mu);
    return trials.empty() ? 0.0 : std::sqrt(s / static_cast<double>(trials.size()));
  }
  bool all_affine() const {
    for (const auto& t : trials)
      if (!t.all_affine) return false;
    return !trials.empty();
  }
};

/// Model for one trial: identity distortions in the linear sanity scenario, otherwise
/// the full nonlinearity catalog.
inline PnlModel scenario_model(const ExperimentConfig& cfg, std::uint64_t seed) {
  PnlModel model = sample_model(cfg.M, cfg.K, {}, seed);
  if (cfg.scenario == Scenario::LinearSanity)
    for (auto& g : model.g) g = Nonlinearity::identity();
  return model;
}

inline json ident_to_json(const IdentReport& r) {
  std::vector<std::vector<double>> b(r.B.rows(), std::vector<double>(r.B.cols()));
  for (Eigen::Index i = 0; i < r.B.rows(); ++i)
    for (Eigen::Index j = 0; j < r.B.cols(); ++j) b[i][j] = r.B(i, j);
  return {{"M", r.M},
          {"K", r.K},
          {"K_free", r.K_free},
          {"D", r.D},
          {"free_idx", r.free_idx},
          {"B", b},
          {"krank_B", r.krank_B},
          {"krank_Qt", r.krank_Qt},
          {"krank_exhaustive", r.krank_exhaustive},
          {"rank_QtKRB", r.rank_QtKRB},
          {"sigma_min", r.sigma_min},
          {"condition_ok", r.condition_ok},
          {"tol", r.tol}};
}

namespace detail {

inline void write_affine_csv(const std::filesystem::path& p, const AffineFitResult& fit) {
  auto os = io::open_out(p);
  os << "channel,c,d,r2,max_resid\n";
  for (std::size_t m = 0; m < fit.channels.size(); ++m) {
    const auto& c = fit.channels[m];
    os << m + 1 << ',' << fmt17(c.c) << ',' << fmt17(c.d) << ',' << (c.degenerate ? std::string("degenerate") : fmt17(c.r2))
       << ',' << fmt17(c.max_abs_residual) << '\n';
  }
}

inline void write_subspace_txt(const std::filesystem::path& p, const SubspaceDistanceResult& sd) {
  auto os = io::open_out(p);
  os << "distance " << fmt17(sd.distance) << '\n' << "angles";
  for (double a : sd.principal_angles) os << ' ' << fmt17(a);
  os << '\n' << "K " << sd.K_used << '\n';
}

}  // namespace detail

/// h_m(z) = f_m(g_m(z)) on one common grid spanning the union of the channels' observed
/// pre-distortion ranges. Columns z,h_1..h_M.
inline void write_composition_grid(const std::filesystem::path& p, const std::vector<ChannelNet>& f,
                                   const PnlModel& model, const Eigen::MatrixXd& Z, int grid_size) {
  auto os = io::open_out(p);
  const Eigen::VectorXd grid = uniform_grid(Z.minCoeff(), Z.maxCoeff(), grid_size);
  os << 'z';
  for (Eigen::Index m = 0; m < model.M(); ++m) os << ",h_" << m + 1;
  os << '\n';
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    os << fmt17(grid(i));
    for (Eigen::Index m = 0; m < model.M(); ++m) os << ',' << fmt17(f[m].forward(model.g[m](grid(i))));
    os << '\n';
  }
}

inline json trial_to_json(const TrialSummary& t) {
  return {{"trial", t.trial},
          {"seed", t.seed},
          {"r2", t.r2},
          {"second_derivative_proxy", t.second_derivative_proxy},
          {"all_affine", t.all_affine},
          {"subspace_distance", t.subspace_distance},
          {"principal_angles", t.principal_angles},
          {"L1", t.final_loss.L1},
          {"L2", t.final_loss.L2},
          {"L", t.final_loss.L},
          {"max_weight_norm", t.max_weight_norm},
          {"ident", ident_to_json(t.ident)},
          {"warnings", t.warnings}};
}

inline json summary_to_json(const ScenarioSummary& s) {
  json j;
  j["version"] = kVersion;
  j["scenario"] = to_string(s.config.scenario);
  j["trials"] = json::array();
  for (const auto& t : s.trials) j["trials"].push_back(trial_to_json(t));
  j["mean_subspace_distance"] = s.mean_distance();
  j["std_subspace_distance"] = s.std_distance();
  j["all_affine"] = s.all_affine();
  return j;
}

/// Generates, trains and evaluates one trial; writes its artifacts under `dir` when non-empty.
inline TrialSummary run_trial(const ExperimentConfig& cfg, int trial, const std::filesystem::path& dir,
                              std::ostream* log = nullptr) {
  TrialSummary ts;
  ts.trial = trial;
  ts.seed = cfg.trial_seed(trial);
  try {
    const PnlModel model = scenario_model(cfg, ts.seed);
    const MixtureDataset data = generate(model, cfg.latent(), cfg.N, ts.seed);
    TrainConfig tc = cfg.train;
    tc.seed = ts.seed;
    TrainObserver obs;
    if (log != nullptr)
      obs = [&](const TrainProgress& p) {
        if ((p.record.iter + 1) % 25 == 0 || p.record.iter == 0)
          *log << "  trial " << trial << " iter " << p.record.iter + 1 << "/" << tc.outer_iters << " L1=" << p.record.L1
               << " L2=" << p.record.L2 << " (" << p.record.seconds << " s)\n"
               << std::flush;
      };
    const TrainResult tr = train(data, tc, obs);

    const AffineFitResult fit = affine_fit_all(tr.f, model, *data.Z, cfg.grid_size);
    const Eigen::MatrixXd F = apply_nets(tr.f, data.X);
    // Simplex latents lose one dimension to centering.
    const SubspaceDistanceResult sd = subspace_distance(*data.S, F, cfg.latent().free_count());
    std::vector<int> free_idx(cfg.latent().free_count());
    std::iota(free_idx.begin(), free_idx.end(), 0);
    ts.ident = verify_rank(model.A, tr.basis.Q, free_idx);

    for (const auto& c : fit.channels) {
      ts.r2.push_back(c.degenerate ? 0.0 : c.r2);
      ts.second_derivative_proxy.push_back(c.second_derivative_proxy);
    }
    ts.all_affine = fit.all_affine(cfg.r2_threshold);
    ts.subspace_distance = sd.distance;
    ts.principal_angles = sd.principal_angles;
    ts.final_loss = {tr.trace.records.back().L1, tr.trace.records.back().L2, tr.trace.records.back().L};
    for (const auto& net : tr.f) ts.max_weight_norm = std::max(ts.max_weight_norm, net.max_weight_norm());
    ts.warnings = tr.warnings;

    if (!dir.empty()) {
      write_meta_json(dir / "meta.json", DatasetMeta{model, cfg.latent(), cfg.N, ts.seed});
      save_checkpoint(dir / "checkpoint", tr.f, tr.r, tr.basis);
      write_trace_csv(dir / "trace.csv", tr.trace);
      detail::write_affine_csv(dir / "affine.csv", fit);
      detail::write_subspace_txt(dir / "subspace.txt", sd);
      write_composition_grid(dir / "composition_grid.csv", tr.f, model, *data.Z, cfg.grid_size);
      io::write_json(dir / "ident.json", ident_to_json(ts.ident));
    }
  } catch (const NumericError& e) {
    throw NumericError("trial " + std::to_string(trial) + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError("trial " + std::to_string(trial) + ": " + e.what());
  }
  return ts;
}

/// Runs every trial of the scenario. With a non-empty cfg.out_dir, writes the resolved
/// config (config.json), per-trial artifacts (trial_<i>/) and summary.json.
inline ScenarioSummary run_scenario(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  Eigen::setNbThreads(cfg.threads);
  ScenarioSummary s;
  s.config = cfg;
  const std::filesystem::path out = cfg.out_dir;
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    write_config(out / "config.json", cfg);
    io::write_json(out / "version.json", {{"version", kVersion}});
  }
  for (int t = 0; t < cfg.trials; ++t) {
    if (log) *log << to_string(cfg.scenario) << " trial " << t + 1 << "/" << cfg.trials << " (R=" << cfg.train.R
                  << ", N=" << cfg.N << ")\n";
    s.trials.push_back(run_trial(cfg, t, out.empty() ? out : out / ("trial_" + std::to_string(t)), log));
    if (log) *log << "  distance=" << s.trials.back().subspace_distance << " affine=" << s.trials.back().all_affine << "\n";
  }
  if (!out.empty()) io::write_json(out / "summary.json", summary_to_json(s));
  return s;
}

// ---------------------------------------------------------------- sweep

struct SweepCell {
  Eigen::Index N = 0;
  int R = 0;
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> values;
};

struct SweepResult {
  std::vector<SweepCell> cells;

  const SweepCell& at(Eigen::Index N, int R) const {
    for (const auto& c : cells)
      if (c.N == N && c.R == R) return c;
    throw ValidationError("sweep has no cell N=" + std::to_string(N) + " R=" + std::to_string(R));
  }
};

inline void write_sweep_csv(const std::filesystem::path& p, const SweepResult& res) {
  auto os = io::open_out(p);
  os << "N,R,mean,std,trial_values\n";
  for (const auto& c : res.cells) {
    os << c.N << ',' << c.R << ',' << fmt17(c.mean) << ',' << fmt17(c.std) << ',';
    for (std::size_t i = 0; i < c.values.size(); ++i) os << (i ? ";" : "") << fmt17(c.values[i]);
    os << '\n';
  }
}

/// Mean and std of the subspace distance over `trials` seeds for every (R, N) pair.
/// Writes sweep.csv and per-cell scenario outputs under base.out_dir when set.
inline SweepResult run_sweep(const std::vector<int>& R_list, const std::vector<Eigen::Index>& N_list, int trials,
                             const ExperimentConfig& base, std::ostream* log = nullptr) {
  if (R_list.empty() || N_list.empty()) throw ValidationError("sweep: R and N lists must be non-empty");
  SweepResult res;
  const std::filesystem::path out = base.out_dir;
  for (const auto N : N_list) {
    for (const int R : R_list) {
      ExperimentConfig c = base;
      c.N = N;
      c.train.R = R;
      c.trials = trials;
      c.out_dir = out.empty() ? std::string() : (out / ("N" + std::to_string(N) + "_R" + std::to_string(R))).string();
      const ScenarioSummary s = run_scenario(c, log);
      SweepCell cell{N, R, s.mean_distance(), s.std_distance(), {}};
      for (const auto& t : s.trials) cell.values.push_back(t.subspace_distance);
      res.cells.push_back(std::move(cell));
    }
  }
  if (!out.empty()) write_sweep_csv(out / "sweep.csv", res);
  return res;
}

}  // namespace pnlsi
