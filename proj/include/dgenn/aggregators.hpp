#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "dgenn/graphs.hpp"
#include "dgenn/types.hpp"

namespace dgenn {

enum class AggregatorKind { GCN, NGCF, LightGCN };
enum class Activation { Identity, ReLU, LeakyReLU };
// How the L+1 layer states (and the per-field outputs) are combined.
enum class PoolMode { Sum, Mean };

std::string_view to_string(AggregatorKind k);
std::string_view to_string(Activation a);
std::string_view to_string(PoolMode m);
AggregatorKind aggregator_from(std::string_view s);
Activation activation_from(std::string_view s);
PoolMode pool_mode_from(std::string_view s);

/// Number of whole-graph propagations run since process start.
inline std::atomic<std::uint64_t>& propagation_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

template <typename Scalar>
struct AggregatorParams {
  AggregatorKind kind = AggregatorKind::LightGCN;
  Activation activation = Activation::LeakyReLU;
  Scalar leaky_slope = Scalar(0.2);
  std::vector<Matrix<Scalar>> w1;  // GCN: W^(l); NGCF: W1^(l)
  std::vector<Matrix<Scalar>> w2;  // NGCF only

  /// Xavier-uniform d x d weights per layer; LightGCN gets none.
  template <typename Rng>
  static AggregatorParams make(AggregatorKind kind, Activation activation, int layers, Index dim,
                               Rng& rng) {
    AggregatorParams p;
    p.kind = kind;
    p.activation = activation;
    if (kind == AggregatorKind::LightGCN) return p;
    const double bound = std::sqrt(6.0 / (2.0 * static_cast<double>(dim)));
    std::uniform_real_distribution<double> u(-bound, bound);
    auto draw = [&] {
      Matrix<Scalar> w(dim, dim);
      for (Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(u(rng));
      return w;
    };
    for (int l = 0; l < layers; ++l) p.w1.push_back(draw());
    if (kind == AggregatorKind::NGCF)
      for (int l = 0; l < layers; ++l) p.w2.push_back(draw());
    return p;
  }

  /// Same shapes, all zeros (gradient accumulator).
  AggregatorParams zeros_like() const {
    AggregatorParams g = *this;
    for (auto& w : g.w1) w.setZero();
    for (auto& w : g.w2) w.setZero();
    return g;
  }
};

template <typename Scalar>
Scalar activate(Activation a, Scalar x, Scalar slope) {
  switch (a) {
    case Activation::Identity: return x;
    case Activation::ReLU: return x > Scalar(0) ? x : Scalar(0);
    case Activation::LeakyReLU: return x > Scalar(0) ? x : slope * x;
  }
  return x;
}

template <typename Scalar>
Scalar activate_grad(Activation a, Scalar x, Scalar slope) {
  switch (a) {
    case Activation::Identity: return Scalar(1);
    case Activation::ReLU: return x > Scalar(0) ? Scalar(1) : Scalar(0);
    case Activation::LeakyReLU: return x > Scalar(0) ? Scalar(1) : slope;
  }
  return Scalar(1);
}

/// 1/sqrt(deg(h) deg(i)); 0 when either node is isolated.
inline double norm_factor(std::uint32_t h, std::uint32_t i, const SparseGraph& graph) {
  const auto dh = graph.degree(h);
  const auto di = graph.degree(i);
  if (dh == 0 || di == 0) return 0.0;
  return 1.0 / std::sqrt(static_cast<double>(dh) * static_cast<double>(di));
}

// ---------------------------------------------------------------------------
// Per-node kernels. `table` holds layer-l states, one row per graph node.
// Neighbors are visited in ascending index order.

template <typename Scalar>
struct WeightedNeighbor {
  Vector<Scalar> embedding;
  Scalar norm = Scalar(0);
};

template <typename Scalar>
std::vector<WeightedNeighbor<Scalar>> gather_neighbors(const Matrix<Scalar>& table,
                                                       const SparseGraph& graph, std::uint32_t h) {
  std::vector<WeightedNeighbor<Scalar>> out;
  for (auto i : graph.neighbors(h))
    out.push_back({table.row(i).transpose(), static_cast<Scalar>(norm_factor(h, i, graph))});
  return out;
}

template <typename Scalar>
Vector<Scalar> apply_activation(const AggregatorParams<Scalar>& p, Vector<Scalar> v) {
  for (Index k = 0; k < v.size(); ++k) v[k] = activate(p.activation, v[k], p.leaky_slope);
  return v;
}

/// sigma(W sum_{i in {h} u N_h} d(h,i) e_i). The self term uses 1/deg(h), or
/// 1 for an isolated node.
template <typename Scalar>
Vector<Scalar> gcn_aggregate(const Vector<Scalar>& e_h, Scalar self_norm,
                             std::span<const WeightedNeighbor<Scalar>> neighbors,
                             const AggregatorParams<Scalar>& params, std::size_t layer) {
  if (params.kind != AggregatorKind::GCN) throw ConfigError("gcn_aggregate: wrong aggregator kind");
  const auto& w = params.w1.at(layer);
  if (w.cols() != e_h.size()) throw NumericError("gcn_aggregate: dimension mismatch");
  Vector<Scalar> acc = self_norm * e_h;
  for (const auto& n : neighbors) {
    if (n.embedding.size() != e_h.size()) throw NumericError("gcn_aggregate: dimension mismatch");
    acc += n.norm * n.embedding;
  }
  return apply_activation(params, Vector<Scalar>(w * acc));
}

/// sigma(W1 e_h + sum_{i in N_h} d(h,i) (W1 e_i + W2 (e_h .* e_i))).
template <typename Scalar>
Vector<Scalar> ngcf_aggregate(const Vector<Scalar>& e_h,
                              std::span<const WeightedNeighbor<Scalar>> neighbors,
                              const AggregatorParams<Scalar>& params, std::size_t layer) {
  if (params.kind != AggregatorKind::NGCF) throw ConfigError("ngcf_aggregate: wrong aggregator kind");
  const auto& w1 = params.w1.at(layer);
  const auto& w2 = params.w2.at(layer);
  if (w1.cols() != e_h.size() || w2.cols() != e_h.size())
    throw NumericError("ngcf_aggregate: dimension mismatch");
  Vector<Scalar> acc = w1 * e_h;
  for (const auto& n : neighbors) {
    if (n.embedding.size() != e_h.size()) throw NumericError("ngcf_aggregate: dimension mismatch");
    acc += n.norm * (w1 * n.embedding + w2 * e_h.cwiseProduct(n.embedding));
  }
  return apply_activation(params, std::move(acc));
}

/// sum_{i in N_h} d(h,i) e_i; the central node itself is not included.
template <typename Scalar>
Vector<Scalar> lightgcn_aggregate(std::span<const WeightedNeighbor<Scalar>> neighbors, Index dim) {
  Vector<Scalar> acc = Vector<Scalar>::Zero(dim);
  for (const auto& n : neighbors) acc += n.norm * n.embedding;
  return acc;
}

template <typename Scalar>
Vector<Scalar> lightgcn_aggregate(const Matrix<Scalar>& table, const SparseGraph& graph,
                                  std::uint32_t node) {
  const auto nbrs = gather_neighbors(table, graph, node);
  return lightgcn_aggregate<Scalar>(nbrs, table.cols());
}

/// Combines per-layer (or per-field) vectors: Sum, or Sum / count.
template <typename Scalar>
Vector<Scalar> layer_pool(std::span<const Vector<Scalar>> layers, PoolMode mode) {
  if (layers.empty()) throw NumericError("layer_pool: no layers");
  Vector<Scalar> acc = layers[0];
  for (std::size_t l = 1; l < layers.size(); ++l) acc += layers[l];
  if (mode == PoolMode::Mean) acc /= static_cast<Scalar>(layers.size());
  return acc;
}

// ---------------------------------------------------------------------------
// Whole-graph propagation

/// Normalized adjacency of one graph plus the GCN self factors.
template <typename Scalar>
struct PropagationOperator {
  SparseMatrix<Scalar> adjacency;  // d(h,i) at (h,i); symmetric
  Vector<Scalar> self;             // 1/deg(h), 1 for isolated nodes
  std::vector<std::uint8_t> isolated;

  Index nodes() const { return adjacency.rows(); }

  static PropagationOperator from_graph(const SparseGraph& g) {
    PropagationOperator op;
    const auto n = static_cast<Index>(g.node_count());
    op.adjacency.resize(n, n);
    op.self.resize(n);
    op.isolated.assign(static_cast<std::size_t>(n), 0);
    std::vector<Eigen::Triplet<Scalar, std::int64_t>> triplets;
    triplets.reserve(g.indices().size());
    for (std::uint32_t h = 0; h < g.node_count(); ++h) {
      const auto dh = g.degree(h);
      op.isolated[h] = dh == 0;
      op.self[h] = dh == 0 ? Scalar(1) : Scalar(1) / static_cast<Scalar>(dh);
      for (auto i : g.neighbors(h))
        triplets.emplace_back(h, i, static_cast<Scalar>(norm_factor(h, i, g)));
    }
    op.adjacency.setFromTriplets(triplets.begin(), triplets.end());
    op.adjacency.makeCompressed();
    return op;
  }
};

/// Everything the backward pass needs from one propagation.
template <typename Scalar>
struct PropagationTrace {
  std::vector<Matrix<Scalar>> states;  // layers 0..L
  std::vector<Matrix<Scalar>> mixed;   // GCN: (A + diag(self)) X; NGCF: A X
  std::vector<Matrix<Scalar>> pre;     // pre-activation (GCN / NGCF)
  Matrix<Scalar> pooled;
};

namespace detail {

template <typename Scalar>
void activate_inplace(const AggregatorParams<Scalar>& p, Matrix<Scalar>& m) {
  if (p.activation == Activation::Identity) return;
  m = m.unaryExpr([&](Scalar x) { return activate(p.activation, x, p.leaky_slope); });
}

template <typename Scalar>
Matrix<Scalar> activation_grad(const AggregatorParams<Scalar>& p, const Matrix<Scalar>& pre) {
  return pre.unaryExpr([&](Scalar x) { return activate_grad(p.activation, x, p.leaky_slope); });
}

}  // namespace detail

/// Runs `layers` rounds of the aggregator and pools the L+1 states. Isolated
/// nodes keep their layer-0 row as the pooled output.
template <typename Scalar>
PropagationTrace<Scalar> propagate(const PropagationOperator<Scalar>& op, const Matrix<Scalar>& x0,
                                   const AggregatorParams<Scalar>& params, int layers,
                                   PoolMode mode) {
  if (x0.rows() != op.nodes()) throw NumericError("propagate: node count mismatch");
  if (params.kind != AggregatorKind::LightGCN && static_cast<int>(params.w1.size()) < layers)
    throw NumericError("propagate: missing layer weights");
  propagation_counter().fetch_add(1, std::memory_order_relaxed);

  PropagationTrace<Scalar> t;
  t.states.reserve(static_cast<std::size_t>(layers) + 1);
  t.states.push_back(x0);
  for (int l = 0; l < layers; ++l) {
    const auto& x = t.states.back();
    Matrix<Scalar> next;
    switch (params.kind) {
      case AggregatorKind::LightGCN:
        next = op.adjacency * x;
        break;
      case AggregatorKind::GCN: {
        Matrix<Scalar> mixed = op.adjacency * x;
        mixed += op.self.asDiagonal() * x;
        Matrix<Scalar> pre = mixed * params.w1[l].transpose();
        next = pre;
        detail::activate_inplace(params, next);
        t.mixed.push_back(std::move(mixed));
        t.pre.push_back(std::move(pre));
        break;
      }
      case AggregatorKind::NGCF: {
        Matrix<Scalar> nbr = op.adjacency * x;
        Matrix<Scalar> pre = (x + nbr) * params.w1[l].transpose();
        pre.noalias() += x.cwiseProduct(nbr) * params.w2[l].transpose();
        next = pre;
        detail::activate_inplace(params, next);
        t.mixed.push_back(std::move(nbr));
        t.pre.push_back(std::move(pre));
        break;
      }
    }
    t.states.push_back(std::move(next));
  }
  t.pooled = t.states[0];
  for (std::size_t l = 1; l < t.states.size(); ++l) t.pooled += t.states[l];
  if (mode == PoolMode::Mean) t.pooled /= static_cast<Scalar>(t.states.size());
  for (Index h = 0; h < op.nodes(); ++h)
    if (op.isolated[static_cast<std::size_t>(h)]) t.pooled.row(h) = x0.row(h);
  return t;
}

/// Gradient of a scalar objective w.r.t. the layer-0 states (returned) and
/// the aggregator weights (accumulated into `grad_params` when non-null).
template <typename Scalar>
Matrix<Scalar> propagate_backward(const PropagationOperator<Scalar>& op,
                                  const PropagationTrace<Scalar>& t,
                                  const AggregatorParams<Scalar>& params, PoolMode mode,
                                  const Matrix<Scalar>& grad_pooled,
                                  AggregatorParams<Scalar>* grad_params) {
  const auto layers = static_cast<int>(t.states.size()) - 1;
  const Scalar c = mode == PoolMode::Mean ? Scalar(1) / static_cast<Scalar>(layers + 1) : Scalar(1);

  // Pooling: every layer receives c * g, except isolated rows which were
  // overwritten by layer 0.
  Matrix<Scalar> g_layer = c * grad_pooled;  // gradient flowing into state L
  std::vector<Index> iso;
  for (Index h = 0; h < op.nodes(); ++h)
    if (op.isolated[static_cast<std::size_t>(h)]) iso.push_back(h);
  for (auto h : iso) g_layer.row(h).setZero();

  for (int l = layers - 1; l >= 0; --l) {
    const auto& x = t.states[static_cast<std::size_t>(l)];
    Matrix<Scalar> g_prev;
    switch (params.kind) {
      case AggregatorKind::LightGCN:
        g_prev = op.adjacency * g_layer;
        break;
      case AggregatorKind::GCN: {
        const auto& mixed = t.mixed[static_cast<std::size_t>(l)];
        Matrix<Scalar> g_pre =
            g_layer.cwiseProduct(detail::activation_grad(params, t.pre[static_cast<std::size_t>(l)]));
        if (grad_params) grad_params->w1[l].noalias() += g_pre.transpose() * mixed;
        Matrix<Scalar> g_mixed = g_pre * params.w1[l];
        g_prev = op.adjacency * g_mixed;
        g_prev += op.self.asDiagonal() * g_mixed;
        break;
      }
      case AggregatorKind::NGCF: {
        const auto& nbr = t.mixed[static_cast<std::size_t>(l)];
        Matrix<Scalar> g_pre =
            g_layer.cwiseProduct(detail::activation_grad(params, t.pre[static_cast<std::size_t>(l)]));
        if (grad_params) {
          grad_params->w1[l].noalias() += g_pre.transpose() * (x + nbr);
          grad_params->w2[l].noalias() += g_pre.transpose() * x.cwiseProduct(nbr);
        }
        Matrix<Scalar> a = g_pre * params.w1[l];
        Matrix<Scalar> b = g_pre * params.w2[l];
        Matrix<Scalar> g_nbr = a + b.cwiseProduct(x);
        g_prev = a + b.cwiseProduct(nbr);
        g_prev += op.adjacency * g_nbr;
        break;
      }
    }
    g_layer = std::move(g_prev);
    // state l also feeds the pooled output directly
    g_layer += c * grad_pooled;
    for (auto h : iso) g_layer.row(h).setZero();
  }
  for (auto h : iso) g_layer.row(h) = grad_pooled.row(h);
  return g_layer;
}

}  // namespace dgenn
