#pragma once

// File formats: dataset CSV + JSON sidecar, network checkpoints, text matrices and
// training traces.

#include "pnlsi/bcd_trainer.hpp"
#include "pnlsi/common.hpp"
#include "pnlsi/model.hpp"
#include "pnlsi/shallow_net.hpp"

#include "json.hpp"

#include <Eigen/Dense>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace pnlsi {

using json = nlohmann::json;

/// %.17g: round-trips every double.
inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace io {

inline std::ofstream open_out(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(p);
  if (!os) throw ValidationError("cannot open '" + p.string() + "' for writing");
  return os;
}

inline std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw ValidationError("cannot open '" + p.string() + "'");
  return is;
}

inline json read_json(const std::filesystem::path& p) {
  auto is = open_in(p);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ValidationError("parse error in '" + p.string() + "': " + e.what());
  }
}

inline void write_json(const std::filesystem::path& p, const json& j) {
  auto os = open_out(p);
  os << j.dump(2) << '\n';
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline double parse_double(const std::string& tok, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size() && tok.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("cannot parse number '" + tok + "' at " + where);
  }
}

}  // namespace io

// ---------------------------------------------------------------- dataset

/// Header `x1..xM[,s1..sK,z1..zM]`, one sample per line.
inline void write_dataset_csv(const std::filesystem::path& path, const MixtureDataset& ds) {
  auto os = io::open_out(path);
  const Eigen::Index M = ds.X.rows();
  const bool latent = ds.S.has_value() && ds.Z.has_value();
  const Eigen::Index K = latent ? ds.S->rows() : 0;
  for (Eigen::Index m = 0; m < M; ++m) os << (m ? "," : "") << 'x' << m + 1;
  if (latent) {
    for (Eigen::Index k = 0; k < K; ++k) os << ",s" << k + 1;
    for (Eigen::Index m = 0; m < M; ++m) os << ",z" << m + 1;
  }
  os << '\n';
  for (Eigen::Index l = 0; l < ds.X.cols(); ++l) {
    for (Eigen::Index m = 0; m < M; ++m) os << (m ? "," : "") << fmt17(ds.X(m, l));
    if (latent) {
      for (Eigen::Index k = 0; k < K; ++k) os << ',' << fmt17((*ds.S)(k, l));
      for (Eigen::Index m = 0; m < M; ++m) os << ',' << fmt17((*ds.Z)(m, l));
    }
    os << '\n';
  }
}

inline MixtureDataset read_dataset_csv(const std::filesystem::path& path) {
  auto is = io::open_in(path);
  std::string line;
  if (!std::getline(is, line)) throw ValidationError("'" + path.string() + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = io::split(line, ',');
  Eigen::Index M = 0, K = 0, Mz = 0;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto& h = header[i];
    const char prefix = h.empty() ? '?' : h[0];
    const std::string expect_x = "x" + std::to_string(M + 1);
    if (prefix == 'x' && K == 0 && Mz == 0 && h == expect_x) {
      ++M;
    } else if (prefix == 's' && Mz == 0 && h == "s" + std::to_string(K + 1)) {
      ++K;
    } else if (prefix == 'z' && K > 0 && h == "z" + std::to_string(Mz + 1)) {
      ++Mz;
    } else {
      throw ValidationError("unexpected CSV header column '" + h + "' in '" + path.string() + "'");
    }
  }
  if (M == 0) throw ValidationError("CSV header has no x columns");
  if ((K > 0) != (Mz > 0) || (Mz > 0 && Mz != M)) throw ValidationError("CSV header must carry s1..sK and z1..zM together");

  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto toks = io::split(line, ',');
    if (toks.size() != header.size())
      throw ValidationError("line " + std::to_string(lineno) + " of '" + path.string() + "' has " +
                            std::to_string(toks.size()) + " fields, expected " + std::to_string(header.size()));
    std::vector<double> row(toks.size());
    for (std::size_t i = 0; i < toks.size(); ++i)
      row[i] = io::parse_double(toks[i], "line " + std::to_string(lineno));
    rows.push_back(std::move(row));
  }
  const Eigen::Index N = static_cast<Eigen::Index>(rows.size());
  MixtureDataset ds;
  ds.X.resize(M, N);
  if (K > 0) {
    ds.S = Eigen::MatrixXd(K, N);
    ds.Z = Eigen::MatrixXd(M, N);
  }
  for (Eigen::Index l = 0; l < N; ++l) {
    for (Eigen::Index m = 0; m < M; ++m) ds.X(m, l) = rows[l][m];
    for (Eigen::Index k = 0; k < K; ++k) (*ds.S)(k, l) = rows[l][M + k];
    for (Eigen::Index m = 0; m < Mz; ++m) (*ds.Z)(m, l) = rows[l][M + K + m];
  }
  return ds;
}

/// Sidecar metadata: dimensions, seed, nonlinearities and A (row-major).
struct DatasetMeta {
  PnlModel model;
  LatentSpec latent;
  Eigen::Index N = 0;
  std::uint64_t seed = 0;
};

inline json nonlinearity_to_json(const Nonlinearity& g) {
  return {{"kind", to_string(g.kind)}, {"alpha", g.alpha}, {"beta", g.beta}, {"gamma", g.gamma}};
}

inline Nonlinearity nonlinearity_from_json(const json& j) {
  Nonlinearity g;
  g.kind = parse_nonlinearity_kind(j.at("kind").get<std::string>());
  g.alpha = j.at("alpha").get<double>();
  g.beta = j.at("beta").get<double>();
  g.gamma = j.value("gamma", 0.0);
  g.validate();
  return g;
}

inline json meta_to_json(const DatasetMeta& meta) {
  json j;
  j["M"] = meta.model.M();
  j["K"] = meta.model.K();
  j["N"] = meta.N;
  j["seed"] = meta.seed;
  j["latent"] = {{"kind", to_string(meta.latent.kind)}, {"lo", meta.latent.lo}, {"hi", meta.latent.hi}};
  j["nonlinearities"] = json::array();
  for (const auto& g : meta.model.g) j["nonlinearities"].push_back(nonlinearity_to_json(g));
  std::vector<double> a;
  for (Eigen::Index i = 0; i < meta.model.M(); ++i)
    for (Eigen::Index k = 0; k < meta.model.K(); ++k) a.push_back(meta.model.A(i, k));
  j["A"] = a;
  return j;
}

inline DatasetMeta meta_from_json(const json& j) {
  try {
    DatasetMeta meta;
    const Eigen::Index M = j.at("M").get<Eigen::Index>();
    const Eigen::Index K = j.at("K").get<Eigen::Index>();
    meta.N = j.at("N").get<Eigen::Index>();
    meta.seed = j.value("seed", std::uint64_t{0});
    const auto a = j.at("A").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(a.size()) != M * K) throw DimensionError("meta: A has wrong number of entries");
    meta.model.A.resize(M, K);
    for (Eigen::Index i = 0; i < M; ++i)
      for (Eigen::Index k = 0; k < K; ++k) meta.model.A(i, k) = a[i * K + k];
    for (const auto& g : j.at("nonlinearities")) meta.model.g.push_back(nonlinearity_from_json(g));
    if (j.contains("latent")) {
      const auto& l = j["latent"];
      meta.latent.kind = parse_latent_kind(l.at("kind").get<std::string>());
      meta.latent.lo = l.value("lo", -1.0);
      meta.latent.hi = l.value("hi", 1.0);
    }
    meta.latent.K = static_cast<int>(K);
    meta.model.validate();
    return meta;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid metadata: ") + e.what());
  }
}

inline void write_meta_json(const std::filesystem::path& path, const DatasetMeta& meta) {
  io::write_json(path, meta_to_json(meta));
}

inline DatasetMeta read_meta_json(const std::filesystem::path& path) { return meta_from_json(io::read_json(path)); }

// ---------------------------------------------------------------- networks

inline json net_to_json(const ChannelNet& net) {
  json j;
  std::vector<Eigen::Index> widths{1};
  for (const auto& l : net.layers) widths.push_back(l.W.rows());
  j["widths"] = widths;
  j["activation"] = to_string(net.activation);
  j["use_bias"] = net.use_bias;
  j["layers"] = json::array();
  for (const auto& l : net.layers) {
    std::vector<double> w;
    for (Eigen::Index r = 0; r < l.W.rows(); ++r)
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) w.push_back(l.W(r, c));
    j["layers"].push_back({{"weights", w}, {"biases", std::vector<double>(l.b.data(), l.b.data() + l.b.size())}});
  }
  return j;
}

inline ChannelNet net_from_json(const json& j) {
  try {
    const auto widths = j.at("widths").get<std::vector<Eigen::Index>>();
    const auto& layers = j.at("layers");
    if (widths.size() < 3 || layers.size() != widths.size() - 1) throw DimensionError("checkpoint: inconsistent widths");
    std::vector<DenseLayer> ls;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const auto w = layers[l].at("weights").get<std::vector<double>>();
      const auto b = layers[l].at("biases").get<std::vector<double>>();
      const Eigen::Index out = widths[l + 1], in = widths[l];
      if (static_cast<Eigen::Index>(w.size()) != out * in || static_cast<Eigen::Index>(b.size()) != out)
        throw DimensionError("checkpoint: layer " + std::to_string(l) + " has wrong parameter count");
      DenseLayer dl{Eigen::MatrixXd(out, in), Eigen::VectorXd(out)};
      for (Eigen::Index r = 0; r < out; ++r)
        for (Eigen::Index c = 0; c < in; ++c) dl.W(r, c) = w[r * in + c];
      for (Eigen::Index r = 0; r < out; ++r) dl.b(r) = b[r];
      ls.push_back(std::move(dl));
    }
    return ChannelNet(std::move(ls), parse_activation(j.at("activation").get<std::string>()), j.value("use_bias", true));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid network checkpoint: ") + e.what());
  }
}

// ---------------------------------------------------------------- matrices

/// Whitespace-separated rows, %.17g.
inline void write_matrix_txt(const std::filesystem::path& path, const Eigen::MatrixXd& X) {
  auto os = io::open_out(path);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) os << (j ? " " : "") << fmt17(X(i, j));
    os << '\n';
  }
}

inline Eigen::MatrixXd read_matrix_txt(const std::filesystem::path& path) {
  auto is = io::open_in(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) row.push_back(io::parse_double(tok, path.string() + ":" + std::to_string(lineno)));
    if (row.empty()) continue;
    if (!rows.empty() && row.size() != rows.front().size())
      throw ValidationError("ragged matrix row at " + path.string() + ":" + std::to_string(lineno));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError("matrix file '" + path.string() + "' is empty");
  Eigen::MatrixXd X(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) X(i, j) = rows[i][j];
  return X;
}

// ---------------------------------------------------------------- training artifacts

/// Writes f_<m>.json, r_<m>.json (m = 1..M) and Q.txt into dir.
inline void save_checkpoint(const std::filesystem::path& dir, const std::vector<ChannelNet>& f,
                            const std::vector<ChannelNet>& r, const NullBasis& basis) {
  std::filesystem::create_directories(dir);
  for (std::size_t m = 0; m < f.size(); ++m) {
    io::write_json(dir / ("f_" + std::to_string(m + 1) + ".json"), net_to_json(f[m]));
    io::write_json(dir / ("r_" + std::to_string(m + 1) + ".json"), net_to_json(r[m]));
  }
  write_matrix_txt(dir / "Q.txt", basis.Q);
}

struct Checkpoint {
  std::vector<ChannelNet> f;
  std::vector<ChannelNet> r;
  NullBasis basis;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  Checkpoint cp;
  for (int m = 1;; ++m) {
    const auto fp = dir / ("f_" + std::to_string(m) + ".json");
    if (!std::filesystem::exists(fp)) break;
    cp.f.push_back(net_from_json(io::read_json(fp)));
    const auto rp = dir / ("r_" + std::to_string(m) + ".json");
    if (std::filesystem::exists(rp)) cp.r.push_back(net_from_json(io::read_json(rp)));
  }
  if (cp.f.empty()) throw ValidationError("no f_1.json in checkpoint directory '" + dir.string() + "'");
  if (std::filesystem::exists(dir / "Q.txt")) cp.basis.Q = read_matrix_txt(dir / "Q.txt");
  return cp;
}

inline void write_trace_csv(const std::filesystem::path& path, const TrainTrace& trace) {
  auto os = io::open_out(path);
  os << "iter,L1,L2,L,orth_dev,minQ,seconds\n";
  for (const auto& r : trace.records)
    os << r.iter << ',' << fmt17(r.L1) << ',' << fmt17(r.L2) << ',' << fmt17(r.L) << ',' << fmt17(r.orth_dev) << ','
       << fmt17(r.minQ) << ',' << fmt17(r.seconds) << '\n';
}

}  // namespace pnlsi
