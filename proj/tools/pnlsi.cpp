// pnlsi: command-line front end for post-nonlinear subspace identification.
//
//   pnlsi generate  synthetic PNL data (CSV + JSON metadata)
//   pnlsi train     alternating Q / network training on a dataset
//   pnlsi evaluate  affine-composition fits and subspace distance of a checkpoint
//   pnlsi check     identifiability report for a mixing matrix
//   pnlsi run       one seeded multi-trial scenario
//   pnlsi sweep     (R, N) grid of scenarios
//
// Exit codes: 0 success, 2 validation error, 3 numeric failure.

#include "pnlsi/bcd_trainer.hpp"
#include "pnlsi/experiments.hpp"
#include "pnlsi/identifiability.hpp"
#include "pnlsi/io.hpp"
#include "pnlsi/metrics.hpp"
#include "pnlsi/model.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace pnlsi;

namespace {

struct GlobalOpts {
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string out;
};

template <class T>
std::vector<T> parse_list(const std::string& s) {
  std::vector<T> out;
  for (const auto& tok : io::split(s, ',')) {
    if (tok.empty()) continue;
    std::istringstream is(tok);
    T v{};
    if (!(is >> v) || !is.eof()) throw ValidationError("bad list element '" + tok + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ValidationError("empty list '" + s + "'");
  return out;
}

std::string require_out(const GlobalOpts& g) {
  if (g.out.empty()) throw ValidationError("--out is required");
  return g.out;
}

// ---------------------------------------------------------------- generate

struct GenerateOpts {
  int M = 5, K = 3;
  Eigen::Index N = 10000;
  std::string latent = "independent_uniform";
  double lo = -1.0, hi = 1.0;
  std::string kinds;
  bool identity = false;
};

int cmd_generate(const GenerateOpts& o, const GlobalOpts& g) {
  const fs::path out = require_out(g);
  std::vector<NonlinearityKind> kinds;
  if (!o.kinds.empty())
    for (const auto& k : io::split(o.kinds, ',')) kinds.push_back(parse_nonlinearity_kind(k));
  const std::uint64_t seed = g.seed.value_or(0);
  PnlModel model = sample_model(o.M, o.K, kinds, seed);
  if (o.identity)
    for (auto& gm : model.g) gm = Nonlinearity::identity();
  LatentSpec latent{parse_latent_kind(o.latent), o.K, o.lo, o.hi};
  const MixtureDataset ds = generate(model, latent, o.N, seed);
  write_dataset_csv(out / "data.csv", ds);
  write_meta_json(out / "meta.json", DatasetMeta{model, latent, o.N, seed});
  std::cout << "wrote " << (out / "data.csv").string() << " (" << o.M << " x " << o.N << ") and meta.json\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainOpts {
  std::string data, meta;
  TrainConfig cfg;
  std::string activation = "relu";
  std::string init = "random";
  std::string init_scheme = "uniform_fan_in";
  bool no_bias = false;
  bool no_standardize = false;
};

int cmd_train(TrainOpts o, const GlobalOpts& g) {
  const fs::path out = require_out(g);
  const MixtureDataset ds = read_dataset_csv(o.data);
  if (!o.meta.empty()) {
    const DatasetMeta meta = read_meta_json(o.meta);
    if (meta.model.M() != ds.M()) throw DimensionError("metadata M does not match the data");
  }
  TrainConfig cfg = o.cfg;
  cfg.activation = parse_activation(o.activation);
  cfg.init = parse_net_init(o.init);
  cfg.init_scheme = parse_init_scheme(o.init_scheme);
  cfg.use_bias = !o.no_bias;
  cfg.standardize = !o.no_standardize;
  if (g.seed) cfg.seed = *g.seed;
  Eigen::setNbThreads(g.threads);

  const TrainResult res = train(ds, cfg, [&](const TrainProgress& p) {
    const auto& r = p.record;
    if ((r.iter + 1) % 10 == 0 || r.iter == 0)
      std::cerr << "iter " << r.iter + 1 << " L1=" << r.L1 << " L2=" << r.L2 << " L=" << r.L << " minQ=" << r.minQ << "\n";
  });
  save_checkpoint(out, res.f, res.r, res.basis);
  write_trace_csv(out / "trace.csv", res.trace);
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
  const auto& last = res.trace.records.back();
  std::cout << "trained " << res.trace.records.size() << " outer iterations: L1=" << last.L1 << " L2=" << last.L2
            << " orth_dev=" << last.orth_dev << " minQ=" << last.minQ << "\n";
  return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateOpts {
  std::string checkpoint, data, meta;
  int K = 0;
  int grid = kDefaultAffineGrid;
};

int cmd_evaluate(const EvaluateOpts& o, const GlobalOpts& g) {
  const fs::path out = require_out(g);
  const Checkpoint cp = load_checkpoint(o.checkpoint);
  const MixtureDataset ds = read_dataset_csv(o.data);
  const DatasetMeta meta = read_meta_json(o.meta);
  if (!ds.S || !ds.Z) throw ValidationError("evaluate needs a dataset with s and z columns");
  if (static_cast<Eigen::Index>(cp.f.size()) != ds.M()) throw DimensionError("checkpoint channel count does not match data");
  const int K = o.K > 0 ? o.K : meta.latent.free_count();

  const AffineFitResult fit = affine_fit_all(cp.f, meta.model, *ds.Z, o.grid);
  const SubspaceDistanceResult sd = subspace_distance(*ds.S, apply_nets(cp.f, ds.X), K);
  fs::create_directories(out);
  detail::write_affine_csv(out / "affine.csv", fit);
  detail::write_subspace_txt(out / "subspace.txt", sd);
  write_composition_grid(out / "composition_grid.csv", cp.f, meta.model, *ds.Z, o.grid);
  for (std::size_t m = 0; m < fit.channels.size(); ++m)
    std::cout << "channel " << m + 1 << ": r2=" << fit.channels[m].r2 << " c=" << fit.channels[m].c
              << " d=" << fit.channels[m].d << (fit.channels[m].degenerate ? " (degenerate)" : "") << "\n";
  std::cout << "subspace distance " << sd.distance << "; all affine (r2 >= " << kAffineR2Threshold
            << "): " << (fit.all_affine() ? "yes" : "no") << "\n";
  return 0;
}

// ---------------------------------------------------------------- check

struct CheckOpts {
  std::string meta, Q, free_idx;
  double tol = 1e-8;
};

int cmd_check(const CheckOpts& o) {
  const DatasetMeta meta = read_meta_json(o.meta);
  const Eigen::MatrixXd& A = meta.model.A;
  Eigen::MatrixXd Q = o.Q.empty() ? null_space_of_transpose(A) : read_matrix_txt(o.Q);
  std::vector<int> free_idx;
  if (o.free_idx.empty()) {
    free_idx.resize(meta.latent.free_count());
    std::iota(free_idx.begin(), free_idx.end(), 0);
  } else {
    free_idx = parse_list<int>(o.free_idx);
  }
  const IdentReport rep = verify_rank(A, Q, free_idx, o.tol);
  std::cout << ident_to_json(rep).dump(2) << "\n";
  std::cout << "Kf=" << rep.K_free << " M=" << rep.M << ": Kf(Kf+1)/2 " << (rep.condition_ok ? ">=" : "<") << " M, "
            << "condition " << (rep.condition_ok ? "satisfied" : "violated") << "; rank(Q^T kr B)=" << rep.rank_QtKRB
            << "/" << rep.M << ", sigma_min=" << rep.sigma_min << ", krank(B)=" << rep.krank_B
            << ", krank(Q^T)=" << rep.krank_Qt << (rep.krank_exhaustive ? "" : " (sampled)") << "\n";
  return 0;
}

// ---------------------------------------------------------------- run / sweep

struct RunOpts {
  std::string config;
  std::string scenario;
  std::optional<int> trials;
};

ExperimentConfig resolve_config(const RunOpts& o, const GlobalOpts& g) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig::defaults(parse_scenario(o.scenario.empty() ? "independent" : o.scenario))
                                        : load_config(o.config);
  if (!o.config.empty() && !o.scenario.empty() && parse_scenario(o.scenario) != c.scenario)
    throw ValidationError("--scenario conflicts with the config file");
  if (g.seed) c.seed = *g.seed;
  if (o.trials) c.trials = *o.trials;
  c.threads = g.threads;
  if (!g.out.empty()) c.out_dir = g.out;
  if (c.out_dir.empty()) throw ValidationError("--out (or out_dir in the config) is required");
  c.validate();
  return c;
}

int cmd_run(const RunOpts& o, const GlobalOpts& g) {
  const ExperimentConfig c = resolve_config(o, g);
  const ScenarioSummary s = run_scenario(c, &std::cerr);
  std::cout << to_string(c.scenario) << ": mean subspace distance " << s.mean_distance() << " +- " << s.std_distance()
            << " over " << s.trials.size() << " trials; all compositions affine: " << (s.all_affine() ? "yes" : "no")
            << "\n";
  return 0;
}

struct SweepOpts {
  RunOpts run;
  std::string R = "8,16,32,64,128,256,1024";
  std::string N = "10000,20000";
};

int cmd_sweep(const SweepOpts& o, const GlobalOpts& g) {
  const ExperimentConfig base = resolve_config(o.run, g);
  const SweepResult res = run_sweep(parse_list<int>(o.R), parse_list<Eigen::Index>(o.N), base.trials, base, &std::cerr);
  for (const auto& c : res.cells) std::cout << "N=" << c.N << " R=" << c.R << ": " << c.mean << " +- " << c.std << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Post-nonlinear subspace identification"};
  app.require_subcommand(1);
  GlobalOpts g;
  app.add_option("--seed", g.seed, "RNG seed")->configurable(false);
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "output directory");
  app.set_version_flag("--version", std::string(kVersion));

  GenerateOpts gen;
  auto* generate_cmd = app.add_subcommand("generate", "generate synthetic PNL data")->fallthrough();
  generate_cmd->add_option("--M", gen.M, "observed dimension");
  generate_cmd->add_option("--K", gen.K, "latent dimension");
  generate_cmd->add_option("--N", gen.N, "number of samples");
  generate_cmd->add_option("--latent", gen.latent, "independent_uniform|simplex");
  generate_cmd->add_option("--lo", gen.lo, "uniform latent lower bound");
  generate_cmd->add_option("--hi", gen.hi, "uniform latent upper bound");
  generate_cmd->add_option("--kinds", gen.kinds, "comma-separated nonlinearity kinds (exp,sigmoid,tanh)");
  generate_cmd->add_flag("--identity", gen.identity, "use g = identity on every channel");

  TrainOpts tr;
  auto* train_cmd = app.add_subcommand("train", "train f, r and Q on a dataset")->fallthrough();
  train_cmd->add_option("--data", tr.data, "dataset CSV")->required();
  train_cmd->add_option("--meta", tr.meta, "dataset metadata JSON");
  train_cmd->add_option("--D", tr.cfg.D, "null-space dimension")->required();
  train_cmd->add_option("--R", tr.cfg.R, "hidden width");
  train_cmd->add_option("--depth", tr.cfg.depth, "hidden layers");
  train_cmd->add_option("--activation", tr.activation, "relu|tanh");
  train_cmd->add_option("--lambda", tr.cfg.lambda, "reconstruction weight");
  train_cmd->add_option("--lr", tr.cfg.lr, "Adam learning rate");
  train_cmd->add_option("--batch", tr.cfg.batch_size, "mini-batch size");
  train_cmd->add_option("--outer", tr.cfg.outer_iters, "outer (Q update) iterations");
  train_cmd->add_option("--inner", tr.cfg.inner_epochs, "epochs per outer iteration");
  train_cmd->add_option("--init", tr.init, "random|identity");
  train_cmd->add_option("--init-scheme", tr.init_scheme, "uniform_fan_in|normal");
  train_cmd->add_option("--early-stop-tol", tr.cfg.early_stop_tol, "relative loss change over 5 iterations; 0 disables");
  train_cmd->add_flag("--no-bias", tr.no_bias, "bias-free networks");
  train_cmd->add_flag("--no-standardize", tr.no_standardize, "train on raw channel values");

  EvaluateOpts ev;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint")->fallthrough();
  evaluate_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint directory")->required();
  evaluate_cmd->add_option("--data", ev.data, "dataset CSV with s and z columns")->required();
  evaluate_cmd->add_option("--meta", ev.meta, "dataset metadata JSON")->required();
  evaluate_cmd->add_option("--K", ev.K, "subspace dimension for the distance (default: free latent count)");
  evaluate_cmd->add_option("--grid", ev.grid, "affine-fit grid size");

  CheckOpts ck;
  auto* check_cmd = app.add_subcommand("check", "identifiability report")->fallthrough();
  check_cmd->add_option("--meta", ck.meta, "dataset metadata JSON")->required();
  check_cmd->add_option("--Q", ck.Q, "text matrix with an orthonormal M x D basis");
  check_cmd->add_option("--free-idx", ck.free_idx, "comma-separated locally free column indices (0-based)");
  check_cmd->add_option("--tol", ck.tol, "relative singular-value threshold");

  RunOpts rn;
  auto* run_cmd = app.add_subcommand("run", "run a seeded scenario")->fallthrough();
  run_cmd->add_option("--config", rn.config, "experiment config JSON");
  run_cmd->add_option("--scenario", rn.scenario, "independent|simplex|linear_sanity");
  run_cmd->add_option("--trials", rn.trials, "number of trials");

  SweepOpts sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "sweep hidden width R and sample count N")->fallthrough();
  sweep_cmd->add_option("--config", sw.run.config, "base experiment config JSON");
  sweep_cmd->add_option("--scenario", sw.run.scenario, "independent|simplex|linear_sanity");
  sweep_cmd->add_option("--trials", sw.run.trials, "trials per cell");
  sweep_cmd->add_option("--R", sw.R, "comma-separated widths");
  sweep_cmd->add_option("--N", sw.N, "comma-separated sample counts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*generate_cmd) return cmd_generate(gen, g);
    if (*train_cmd) return cmd_train(tr, g);
    if (*evaluate_cmd) return cmd_evaluate(ev, g);
    if (*check_cmd) return cmd_check(ck);
    if (*run_cmd) return cmd_run(rn, g);
    if (*sweep_cmd) return cmd_sweep(sw, g);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
