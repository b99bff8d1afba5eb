#pragma once

// Helpers shared by the unit tests and the acceptance runner. The oracles in
// here are written independently of the library: dense matrices, plain
// loops, no sparse kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dgenn/aggregators.hpp"
#include "dgenn/data.hpp"
#include "dgenn/graphs.hpp"

namespace testsupport {

using Dense = Eigen::MatrixXd;

inline dgenn::Schema schema(bool user_attr = true, bool item_attr = false, bool context = false) {
  dgenn::Schema s;
  s.fields.push_back({"user", "user_id", dgenn::ColumnType::Id, dgenn::FieldRole::User});
  s.fields.push_back({"item", "item_id", dgenn::ColumnType::Id, dgenn::FieldRole::Item});
  s.fields.push_back({"timestamp", "ts", dgenn::ColumnType::Timestamp, dgenn::FieldRole::Timestamp});
  if (user_attr) s.fields.push_back({"age", "age", dgenn::ColumnType::Categorical, dgenn::FieldRole::UserAttr});
  if (item_attr) s.fields.push_back({"cat", "cat", dgenn::ColumnType::Categorical, dgenn::FieldRole::ItemAttr});
  if (context) s.fields.push_back({"ctx", "ctx", dgenn::ColumnType::Categorical, dgenn::FieldRole::Context});
  return s;
}

inline dgenn::RawDataset parse(const std::string& csv, const dgenn::Schema& s) {
  std::istringstream in(csv);
  return dgenn::parse_interactions(in, s);
}

/// One row per click: user, item, timestamp, user attribute, item attribute, context.
struct Click {
  std::uint32_t user;
  std::uint32_t item;
  std::int64_t ts;
};

/// Random log over `users` x `items` with per-user lengths in [min_len, max_len]
/// and distinct timestamps. Attribute values depend only on the entity.
inline std::string random_log(std::uint32_t users, std::uint32_t items, std::uint32_t min_len,
                              std::uint32_t max_len, std::uint64_t seed, std::vector<Click>* clicks = nullptr) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint32_t> len(min_len, max_len), item(0, items - 1), ctx(0, 2);
  std::ostringstream out;
  out << "user_id,item_id,ts,age,cat,ctx\n";
  std::int64_t ts = 1000;
  for (std::uint32_t u = 0; u < users; ++u) {
    const auto n = len(rng);
    for (std::uint32_t t = 0; t < n; ++t) {
      const auto v = item(rng);
      ts += 1 + static_cast<std::int64_t>(rng() % 5);
      out << 'u' << u << ",i" << v << ',' << ts << ",a" << (u % 3) << ",c" << (v % 4) << ",x" << ctx(rng)
          << '\n';
      if (clicks) clicks->push_back({u, v, ts});
    }
  }
  return out.str();
}

inline std::vector<dgenn::Edge> random_edges(std::uint32_t nodes, double density, std::mt19937_64& rng,
                                             dgenn::EdgeType type = dgenn::EdgeType::UV) {
  std::bernoulli_distribution keep(density);
  std::vector<dgenn::Edge> edges;
  for (std::uint32_t a = 0; a < nodes; ++a)
    for (std::uint32_t b = a + 1; b < nodes; ++b)
      if (keep(rng)) edges.push_back({a, b, type});
  return edges;
}

inline Dense adjacency(const dgenn::SparseGraph& g) {
  const auto n = static_cast<Eigen::Index>(g.node_count());
  Dense a = Dense::Zero(n, n);
  for (const auto& e : g.edges()) a(e.a, e.b) = a(e.b, e.a) = 1.0;
  return a;
}

/// D^{-1/2} A D^{-1/2}, with zero rows/columns for isolated nodes.
inline Dense normalized(const Dense& a) {
  const Eigen::VectorXd deg = a.rowwise().sum();
  Dense out = Dense::Zero(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      if (a(i, j) != 0.0) out(i, j) = a(i, j) / std::sqrt(deg[i] * deg[j]);
  return out;
}

/// Sum (or mean) of E, AE, ..., A^L E; isolated nodes keep their E row.
inline Dense lightgcn_oracle(const Dense& a, const Dense& e, int layers, bool mean = false) {
  const Dense an = normalized(a);
  Dense state = e, pooled = e;
  for (int l = 0; l < layers; ++l) {
    state = an * state;
    pooled += state;
  }
  if (mean) pooled /= static_cast<double>(layers + 1);
  const Eigen::VectorXd deg = a.rowwise().sum();
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    if (deg[i] == 0.0) pooled.row(i) = e.row(i);
  return pooled;
}

inline double leaky(double x, double slope) { return x > 0 ? x : slope * x; }

/// Hand expansion of one GCN / NGCF layer over the whole graph, row by row.
inline Dense one_layer_oracle(const dgenn::SparseGraph& g, const Dense& x, const dgenn::AggregatorParams<double>& p,
                              std::size_t l) {
  const Dense a = adjacency(g);
  const Eigen::VectorXd deg = a.rowwise().sum();
  Dense out(x.rows(), x.cols());
  for (Eigen::Index h = 0; h < x.rows(); ++h) {
    Eigen::VectorXd pre;
    if (p.kind == dgenn::AggregatorKind::GCN) {
      Eigen::VectorXd acc = (deg[h] == 0 ? 1.0 : 1.0 / deg[h]) * x.row(h).transpose();
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        if (a(h, i) != 0) acc += x.row(i).transpose() / std::sqrt(deg[h] * deg[i]);
      pre = p.w1[l] * acc;
    } else {
      pre = p.w1[l] * x.row(h).transpose();
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        if (a(h, i) != 0)
          pre += (p.w1[l] * x.row(i).transpose() +
                  p.w2[l] * x.row(h).transpose().cwiseProduct(x.row(i).transpose())) /
                 std::sqrt(deg[h] * deg[i]);
    }
    for (Eigen::Index k = 0; k < pre.size(); ++k) out(h, k) = leaky(pre[k], p.leaky_slope);
  }
  return out;
}

inline Dense random_dense(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Dense m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

inline double cosine_sets(const std::set<std::uint32_t>& a, const std::set<std::uint32_t>& b) {
  if (a.empty() || b.empty()) return 0.0;
  double dot = 0.0;
  for (auto x : a) dot += b.count(x) ? 1.0 : 0.0;
  return dot / (std::sqrt(static_cast<double>(a.size())) * std::sqrt(static_cast<double>(b.size())));
}

/// Pairwise AUC: P(score_pos > score_neg) + 0.5 P(tie).
inline double pairwise_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("dgenn_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testsupport
