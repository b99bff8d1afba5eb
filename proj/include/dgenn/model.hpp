#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dgenn/aggregators.hpp"
#include "dgenn/attrconv.hpp"
#include "dgenn/collabconv.hpp"
#include "dgenn/config.hpp"
#include "dgenn/data.hpp"
#include "dgenn/graphs.hpp"

namespace dgenn {

inline constexpr double kProbFloor = 1e-7;

// ---------------------------------------------------------------------------
// Field slots

/// Order of the per-instance field vectors: user, item, one slot per user
/// attribute field, one per item attribute field, the pooled behavior
/// sequence, one per context field.
struct SlotLayout {
  std::vector<std::size_t> user_attr_fields;
  std::vector<std::size_t> item_attr_fields;
  bool behaviors = true;
  std::vector<std::size_t> context_fields;

  std::size_t count() const {
    return 2 + user_attr_fields.size() + item_attr_fields.size() + (behaviors ? 1 : 0) +
           context_fields.size();
  }
  static SlotLayout from(const FeatureVocabulary& vocab, bool behaviors = true);
};

/// Instances flattened to slot id lists: slot s of instance i holds
/// ids[offsets[i * F + s], offsets[i * F + s + 1]).
struct EncodedBatch {
  std::size_t fields = 0;
  std::vector<std::uint64_t> offsets{0};
  std::vector<FeatureId> ids;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const FeatureId> slot(std::size_t i, std::size_t s) const {
    const auto k = i * fields + s;
    return {ids.data() + offsets[k], ids.data() + offsets[k + 1]};
  }
  EncodedBatch subset(std::span<const std::size_t> rows) const;
};

EncodedBatch encode(const SlotLayout& layout, const FeatureVocabulary& vocab,
                    std::span<const Instance> instances);

// ---------------------------------------------------------------------------
// Base-model building blocks

/// Mean of the slot's vectors; an empty slot is the zero vector.
template <typename Scalar>
Vector<Scalar> pool_multivalued(std::span<const Vector<Scalar>> slot, Index dim) {
  Vector<Scalar> acc = Vector<Scalar>::Zero(dim);
  if (slot.empty()) return acc;
  for (const auto& v : slot) {
    if (v.size() != dim) throw NumericError("pool_multivalued: dimension mismatch");
    acc += v;
  }
  return acc / static_cast<Scalar>(slot.size());
}

/// Concatenated field vectors followed by <E_i, E_j> for i < j in
/// lexicographic order.
template <typename Scalar>
Vector<Scalar> inner_product_layer(std::span<const Vector<Scalar>> fields) {
  const auto f = static_cast<Index>(fields.size());
  if (f < 2) throw NumericError("inner_product_layer: need at least two fields");
  const Index d = fields[0].size();
  Vector<Scalar> out(f * d + f * (f - 1) / 2);
  for (Index i = 0; i < f; ++i) {
    if (fields[i].size() != d) throw NumericError("inner_product_layer: dimension mismatch");
    out.segment(i * d, d) = fields[i];
  }
  Index k = f * d;
  for (Index i = 0; i < f; ++i)
    for (Index j = i + 1; j < f; ++j) out[k++] = fields[i].dot(fields[j]);
  return out;
}

inline Index representation_width(Index fields, Index dim) {
  return fields * dim + fields * (fields - 1) / 2;
}

template <typename Scalar>
struct Mlp {
  std::vector<Matrix<Scalar>> w;  // out x in
  std::vector<Vector<Scalar>> b;

  template <typename Rng>
  static Mlp make(Index input, std::span<const std::uint32_t> widths, Rng& rng) {
    Mlp m;
    Index in = input;
    for (auto out_w : widths) {
      const auto out = static_cast<Index>(out_w);
      const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
      std::uniform_real_distribution<double> u(-bound, bound);
      Matrix<Scalar> w(out, in);
      for (Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(u(rng));
      m.w.push_back(std::move(w));
      m.b.push_back(Vector<Scalar>::Zero(out));
      in = out;
    }
    return m;
  }
};

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  return z >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-z))
                        : std::exp(z) / (Scalar(1) + std::exp(z));
}

template <typename Scalar>
Scalar clamp_prob(Scalar p) {
  return std::clamp(p, static_cast<Scalar>(kProbFloor), static_cast<Scalar>(1.0 - kProbFloor));
}

/// ReLU hidden layers, sigmoid output clamped to [1e-7, 1 - 1e-7].
template <typename Scalar>
Scalar mlp_forward(const Vector<Scalar>& representation, const Mlp<Scalar>& mlp) {
  if (mlp.w.empty() || mlp.w.back().rows() != 1) throw NumericError("mlp_forward: final width must be 1");
  Vector<Scalar> a = representation;
  for (std::size_t l = 0; l < mlp.w.size(); ++l) {
    if (mlp.w[l].cols() != a.size() || mlp.b[l].size() != mlp.w[l].rows())
      throw NumericError("mlp_forward: dimension mismatch at layer " + std::to_string(l));
    Vector<Scalar> z = mlp.w[l] * a + mlp.b[l];
    if (l + 1 < mlp.w.size()) z = z.cwiseMax(Scalar(0));
    a = std::move(z);
  }
  return clamp_prob(sigmoid(a[0]));
}

template <typename Scalar, typename Label>
double logloss(std::span<const Scalar> predictions, std::span<const Label> labels) {
  if (predictions.empty()) throw NumericError("logloss: empty batch");
  if (predictions.size() != labels.size()) throw NumericError("logloss: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double p = static_cast<double>(predictions[i]);
    acc += labels[i] ? std::log(p) : std::log(1.0 - p);
  }
  return -acc / static_cast<double>(predictions.size());
}

// ---------------------------------------------------------------------------
// Parameters

template <typename Scalar>
struct TensorRef {
  std::string name;
  Scalar* data = nullptr;
  Index size = 0;
  bool decay = true;  // included in the L2 penalty
};

template <typename Scalar>
struct ModelParams {
  Matrix<Scalar> embeddings;
  std::vector<AggregatorParams<Scalar>> fields;  // one per attribute field plan
  std::array<AggregatorParams<Scalar>, 2> stages;
  Mlp<Scalar> mlp;

  /// Every tensor in a fixed order; names are stable parameter paths.
  std::vector<TensorRef<Scalar>> tensors() {
    std::vector<TensorRef<Scalar>> out;
    out.push_back({"embeddings", embeddings.data(), embeddings.size(), true});
    auto add_agg = [&](const std::string& prefix, AggregatorParams<Scalar>& p) {
      for (std::size_t l = 0; l < p.w1.size(); ++l)
        out.push_back({prefix + ".w1[" + std::to_string(l) + "]", p.w1[l].data(), p.w1[l].size(), true});
      for (std::size_t l = 0; l < p.w2.size(); ++l)
        out.push_back({prefix + ".w2[" + std::to_string(l) + "]", p.w2[l].data(), p.w2[l].size(), true});
    };
    for (std::size_t k = 0; k < fields.size(); ++k) add_agg("attr[" + std::to_string(k) + "]", fields[k]);
    add_agg("within", stages[0]);
    add_agg("across", stages[1]);
    for (std::size_t l = 0; l < mlp.w.size(); ++l) {
      out.push_back({"mlp.w[" + std::to_string(l) + "]", mlp.w[l].data(), mlp.w[l].size(), true});
      out.push_back({"mlp.b[" + std::to_string(l) + "]", mlp.b[l].data(), mlp.b[l].size(), false});
    }
    return out;
  }
  std::vector<TensorRef<Scalar>> tensors() const {
    return const_cast<ModelParams*>(this)->tensors();
  }

  ModelParams zeros_like() const {
    ModelParams z = *this;
    for (auto& t : z.tensors()) std::fill(t.data, t.data + t.size, Scalar(0));
    return z;
  }

  template <typename Other>
  ModelParams<Other> cast() const {
    ModelParams<Other> o;
    o.embeddings = embeddings.template cast<Other>();
    auto cast_agg = [](const AggregatorParams<Scalar>& p) {
      AggregatorParams<Other> q;
      q.kind = p.kind;
      q.activation = p.activation;
      q.leaky_slope = static_cast<Other>(p.leaky_slope);
      for (const auto& w : p.w1) q.w1.push_back(w.template cast<Other>());
      for (const auto& w : p.w2) q.w2.push_back(w.template cast<Other>());
      return q;
    };
    for (const auto& f : fields) o.fields.push_back(cast_agg(f));
    for (std::size_t s = 0; s < 2; ++s) o.stages[s] = cast_agg(stages[s]);
    for (const auto& w : mlp.w) o.mlp.w.push_back(w.template cast<Other>());
    for (const auto& b : mlp.b) o.mlp.b.push_back(b.template cast<Other>());
    return o;
  }

  bool operator==(const ModelParams& o) const {
    const auto a = tensors();
    const auto b = o.tensors();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].size != b[i].size || !std::equal(a[i].data, a[i].data + a[i].size, b[i].data))
        return false;
    return true;
  }
};

// ---------------------------------------------------------------------------
// Graph context

template <typename Scalar>
struct GraphContext {
  std::vector<FieldPlan<Scalar>> fields;
  bool use_fields = false;
  CollabPlan<Scalar> collab;
  bool use_collab = false;

  static GraphContext from(const GraphSet& graphs, const FeatureVocabulary& vocab,
                           const ModelConfig& config) {
    GraphContext c;
    for (const auto* side : {&graphs.user_fields, &graphs.item_fields})
      for (const auto& fg : *side)
        c.fields.push_back(FieldPlan<Scalar>::from_graph(fg, vocab, config.attr_layers));
    c.use_fields = config.use_attr_graphs() && !c.fields.empty();
    c.set_collab(graphs.cf, vocab.num_users(), config);
    return c;
  }

  void set_collab(const SparseGraph& cf, Index users, const ModelConfig& config) {
    const std::array<StageSpec, 2> stages{StageSpec{kWithinMask, config.stage1_layers, config.use_within()},
                                          StageSpec{kAcrossMask, config.stage2_layers, config.use_across()}};
    use_collab = stages[0].enabled || stages[1].enabled;
    if (cf.node_count() > 0) collab = CollabPlan<Scalar>::from_graph(cf, users, stages);
    else use_collab = false;
  }
};

template <typename Scalar, typename Rng>
ModelParams<Scalar> init_params(const ModelConfig& config, Index features, std::size_t field_plans,
                                std::size_t slots, Rng& rng) {
  ModelParams<Scalar> p;
  const auto d = static_cast<Index>(config.embedding_dim);
  std::normal_distribution<double> gauss(0.0, config.init_std);
  p.embeddings.resize(features, d);
  for (Index i = 0; i < p.embeddings.size(); ++i) p.embeddings.data()[i] = static_cast<Scalar>(gauss(rng));
  for (std::size_t k = 0; k < field_plans; ++k)
    p.fields.push_back(AggregatorParams<Scalar>::make(config.aggregator, config.activation,
                                                      config.attr_layers, d, rng));
  p.stages[0] = AggregatorParams<Scalar>::make(config.aggregator, config.activation, config.stage1_layers, d, rng);
  p.stages[1] = AggregatorParams<Scalar>::make(config.aggregator, config.activation, config.stage2_layers, d, rng);
  p.mlp = Mlp<Scalar>::make(representation_width(static_cast<Index>(slots), d), config.mlp, rng);
  return p;
}

// ---------------------------------------------------------------------------
// Network

template <typename Scalar>
struct ForwardCache {
  RefinementTrace<Scalar> refine;
  EnhanceTrace<Scalar> enhance;
  Matrix<Scalar> table;                // embeddings seen by the base model
  Matrix<Scalar> slots;                // n x (F d)
  std::vector<Matrix<Scalar>> acts;    // acts[0] = representation
  std::vector<Matrix<Scalar>> masks;   // dropout masks per hidden layer
  Vector<Scalar> prob;
};

template <typename Scalar>
struct Network {
  SlotLayout layout;
  Index dim = 0;
  PoolMode pool = PoolMode::Sum;
  double l2 = 0.0;
  double dropout = 0.0;
  GraphContext<Scalar> graphs;

  std::span<const FieldPlan<Scalar>> field_plans() const { return graphs.fields; }

  /// Z then P; the traces are kept in `cache` when it is non-null.
  Matrix<Scalar> enhanced_table(const ModelParams<Scalar>& p, ForwardCache<Scalar>* cache) const {
    Matrix<Scalar> z;
    if (graphs.use_fields) {
      auto t = refine_all<Scalar>(graphs.fields, p.fields, p.embeddings, pool);
      z = t.refined;
      if (cache) cache->refine = std::move(t);
    } else {
      z = p.embeddings;
    }
    if (!graphs.use_collab) return z;
    auto t = enhance<Scalar>(graphs.collab, p.stages, z, pool);
    Matrix<Scalar> out = t.enhanced;
    if (cache) cache->enhance = std::move(t);
    return out;
  }

  /// Base-model head on a fixed table: returns clamped probabilities.
  Vector<Scalar> head(const ModelParams<Scalar>& p, const Matrix<Scalar>& table, const EncodedBatch& batch,
                      ForwardCache<Scalar>* cache, bool training, std::uint64_t dropout_seed) const {
    const auto n = static_cast<Index>(batch.size());
    const auto f = static_cast<Index>(layout.count());
    if (static_cast<Index>(batch.fields) != f) throw NumericError("network: slot layout mismatch");
    Matrix<Scalar> slots = Matrix<Scalar>::Zero(n, f * dim);
    for (Index i = 0; i < n; ++i)
      for (Index s = 0; s < f; ++s) {
        const auto ids = batch.slot(static_cast<std::size_t>(i), static_cast<std::size_t>(s));
        if (ids.empty()) continue;
        auto dst = slots.row(i).segment(s * dim, dim);
        for (auto id : ids) dst += table.row(id);
        dst /= static_cast<Scalar>(ids.size());
      }
    Matrix<Scalar> rep(n, representation_width(f, dim));
    rep.leftCols(f * dim) = slots;
    for (Index i = 0; i < n; ++i) {
      Index k = f * dim;
      for (Index a = 0; a < f; ++a)
        for (Index b = a + 1; b < f; ++b)
          rep(i, k++) = slots.row(i).segment(a * dim, dim).dot(slots.row(i).segment(b * dim, dim));
    }

    const bool drop = training && dropout > 0.0;
    std::mt19937_64 rng(dropout_seed);
    std::bernoulli_distribution keep(1.0 - dropout);
    const Scalar scale = drop ? static_cast<Scalar>(1.0 / (1.0 - dropout)) : Scalar(1);
    std::vector<Matrix<Scalar>> acts{std::move(rep)};
    std::vector<Matrix<Scalar>> masks;
    for (std::size_t l = 0; l < p.mlp.w.size(); ++l) {
      if (p.mlp.w[l].cols() != acts.back().cols()) throw NumericError("network: MLP input mismatch");
      Matrix<Scalar> z = acts.back() * p.mlp.w[l].transpose();
      z.rowwise() += p.mlp.b[l].transpose();
      if (l + 1 < p.mlp.w.size()) {
        z = z.cwiseMax(Scalar(0));
        if (drop) {
          Matrix<Scalar> m(z.rows(), z.cols());
          for (Index k = 0; k < m.size(); ++k) m.data()[k] = keep(rng) ? scale : Scalar(0);
          z = z.cwiseProduct(m);
          masks.push_back(std::move(m));
        }
      }
      acts.push_back(std::move(z));
    }
    Vector<Scalar> prob(n);
    for (Index i = 0; i < n; ++i) prob[i] = clamp_prob(sigmoid(acts.back()(i, 0)));
    if (cache) {
      cache->slots = std::move(slots);
      cache->acts = std::move(acts);
      cache->masks = std::move(masks);
      cache->prob = prob;
    }
    return prob;
  }

  Vector<Scalar> predict(const ModelParams<Scalar>& p, const EncodedBatch& batch) const {
    const Matrix<Scalar> table = enhanced_table(p, nullptr);
    return head(p, table, batch, nullptr, false, 0);
  }

  /// Sign of every rectifier input in one forward pass; two parameter
  /// settings with equal patterns lie on the same linear piece.
  std::vector<std::uint8_t> activation_pattern(const ModelParams<Scalar>& p, const EncodedBatch& batch) const {
    ForwardCache<Scalar> c;
    c.table = enhanced_table(p, &c);
    head(p, c.table, batch, &c, false, 0);
    std::vector<std::uint8_t> out;
    auto add = [&](const Matrix<Scalar>& m) {
      for (Index i = 0; i < m.size(); ++i) out.push_back(m.data()[i] > Scalar(0));
    };
    if (graphs.use_fields)
      for (const auto& t : c.refine.fields)
        for (const auto& m : t.pre) add(m);
    if (graphs.use_collab)
      for (std::size_t s = 0; s < 2; ++s)
        if (c.enhance.ran[s])
          for (const auto& m : c.enhance.stages[s].pre) add(m);
    for (std::size_t l = 1; l + 1 < c.acts.size(); ++l) add(c.acts[l]);
    for (Index i = 0; i < c.prob.size(); ++i)
      out.push_back(c.prob[i] <= static_cast<Scalar>(kProbFloor) ||
                    c.prob[i] >= static_cast<Scalar>(1.0 - kProbFloor));
    return out;
  }

  double penalty(const ModelParams<Scalar>& p) const {
    if (l2 == 0.0) return 0.0;
    double acc = 0.0;
    for (const auto& t : p.tensors())
      if (t.decay)
        for (Index i = 0; i < t.size; ++i) acc += static_cast<double>(t.data[i]) * static_cast<double>(t.data[i]);
    return 0.5 * l2 * acc;
  }

  /// Mean logloss plus the L2 term.
  double objective(const ModelParams<Scalar>& p, const EncodedBatch& batch, bool training = false,
                   std::uint64_t dropout_seed = 0) const {
    ForwardCache<Scalar> c;
    const Matrix<Scalar> table = enhanced_table(p, nullptr);
    head(p, table, batch, &c, training, dropout_seed);
    return batch_logloss(c, batch) + penalty(p);
  }

  /// Logloss of the cached forward pass. Unclamped terms are evaluated from
  /// the logit, which is exact for saturated but unclamped predictions.
  static double batch_logloss(const ForwardCache<Scalar>& c, const EncodedBatch& batch) {
    const auto n = c.prob.size();
    if (n == 0) throw NumericError("logloss: empty batch");
    auto softplus = [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); };
    double acc = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double q = static_cast<double>(c.prob[i]);
      const double z = static_cast<double>(c.acts.back()(i, 0));
      const bool y = batch.labels[static_cast<std::size_t>(i)] != 0;
      if (q <= static_cast<double>(static_cast<Scalar>(kProbFloor)) ||
          q >= static_cast<double>(static_cast<Scalar>(1.0 - kProbFloor)))
        acc -= y ? std::log(q) : std::log(1.0 - q);
      else
        acc += y ? softplus(-z) : softplus(z);
    }
    return acc / static_cast<double>(n);
  }

  /// Forward + backward. Returns the objective; `grad` is overwritten.
  double gradient(const ModelParams<Scalar>& p, const EncodedBatch& batch, ModelParams<Scalar>& grad,
                  bool training = false, std::uint64_t dropout_seed = 0) const {
    ForwardCache<Scalar> c;
    c.table = enhanced_table(p, &c);
    head(p, c.table, batch, &c, training, dropout_seed);
    const auto n = static_cast<Index>(batch.size());
    const auto f = static_cast<Index>(layout.count());
    const double loss = batch_logloss(c, batch) + penalty(p);

    grad = p.zeros_like();
    // d(mean logloss)/d(logit); zero where the clamp is active.
    Matrix<Scalar> g(n, 1);
    for (Index i = 0; i < n; ++i) {
      const Scalar q = c.prob[i];
      const bool clamped = q <= static_cast<Scalar>(kProbFloor) || q >= static_cast<Scalar>(1.0 - kProbFloor);
      g(i, 0) = clamped ? Scalar(0) : (q - static_cast<Scalar>(batch.labels[i])) / static_cast<Scalar>(n);
    }
    for (std::size_t l = p.mlp.w.size(); l-- > 0;) {
      const auto& in = c.acts[l];
      grad.mlp.w[l].noalias() += g.transpose() * in;
      grad.mlp.b[l] += g.colwise().sum().transpose();
      Matrix<Scalar> g_in = g * p.mlp.w[l];
      if (l > 0) {
        // `in` is the post-ReLU (and post-dropout) activation of layer l-1.
        if (!c.masks.empty()) g_in = g_in.cwiseProduct(c.masks[l - 1]);
        g_in = g_in.cwiseProduct(in.unaryExpr([](Scalar x) { return x > Scalar(0) ? Scalar(1) : Scalar(0); }));
      }
      g = std::move(g_in);
    }
    // g: n x representation width
    Matrix<Scalar> g_slots = g.leftCols(f * dim);
    for (Index i = 0; i < n; ++i) {
      Index k = f * dim;
      for (Index a = 0; a < f; ++a)
        for (Index b = a + 1; b < f; ++b, ++k) {
          const Scalar gk = g(i, k);
          if (gk == Scalar(0)) continue;
          g_slots.row(i).segment(a * dim, dim) += gk * c.slots.row(i).segment(b * dim, dim);
          g_slots.row(i).segment(b * dim, dim) += gk * c.slots.row(i).segment(a * dim, dim);
        }
    }
    Matrix<Scalar> g_table = Matrix<Scalar>::Zero(c.table.rows(), dim);
    for (Index i = 0; i < n; ++i)
      for (Index s = 0; s < f; ++s) {
        const auto ids = batch.slot(static_cast<std::size_t>(i), static_cast<std::size_t>(s));
        if (ids.empty()) continue;
        const Vector<Scalar> share = g_slots.row(i).segment(s * dim, dim).transpose() / static_cast<Scalar>(ids.size());
        for (auto id : ids) g_table.row(id) += share.transpose();
      }
    if (graphs.use_collab)
      g_table = enhance_backward<Scalar>(graphs.collab, p.stages, c.enhance, pool, g_table, grad.stages);
    if (graphs.use_fields)
      g_table = refine_backward<Scalar>(graphs.fields, p.fields, c.refine, pool, g_table, grad.fields);
    grad.embeddings = std::move(g_table);

    if (l2 != 0.0) {
      auto gt = grad.tensors();
      const auto pt = p.tensors();
      for (std::size_t t = 0; t < gt.size(); ++t)
        if (pt[t].decay)
          for (Index i = 0; i < gt[t].size; ++i) gt[t].data[i] += static_cast<Scalar>(l2) * pt[t].data[i];
    }
    for (const auto& t : grad.tensors())
      for (Index i = 0; i < t.size; ++i)
        if (!std::isfinite(static_cast<double>(t.data[i])))
          throw NumericError("non-finite gradient in " + t.name + " at element " + std::to_string(i));
    return loss;
  }
};

template <typename Scalar>
Network<Scalar> make_network(const ModelConfig& config, const FeatureVocabulary& vocab,
                             const GraphSet& graphs, bool behaviors = true) {
  Network<Scalar> net;
  net.layout = SlotLayout::from(vocab, behaviors);
  net.dim = static_cast<Index>(config.embedding_dim);
  net.pool = config.pool;
  net.l2 = config.l2;
  net.dropout = config.dropout;
  net.graphs = GraphContext<Scalar>::from(graphs, vocab, config);
  return net;
}

// ---------------------------------------------------------------------------
// Optimizer

template <typename Scalar>
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  ModelParams<Scalar> m;
  ModelParams<Scalar> v;

  static Adam make(const ModelParams<Scalar>& p, double lr) {
    Adam a;
    a.lr = lr;
    a.m = p.zeros_like();
    a.v = p.zeros_like();
    return a;
  }

  void update(ModelParams<Scalar>& p, const ModelParams<Scalar>& g) {
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    auto pt = p.tensors();
    const auto gt = g.tensors();
    auto mt = m.tensors();
    auto vt = v.tensors();
    for (std::size_t t = 0; t < pt.size(); ++t)
      for (Index i = 0; i < pt[t].size; ++i) {
        const double gi = static_cast<double>(gt[t].data[i]);
        const double mi = beta1 * static_cast<double>(mt[t].data[i]) + (1.0 - beta1) * gi;
        const double vi = beta2 * static_cast<double>(vt[t].data[i]) + (1.0 - beta2) * gi * gi;
        mt[t].data[i] = static_cast<Scalar>(mi);
        vt[t].data[i] = static_cast<Scalar>(vi);
        pt[t].data[i] -= static_cast<Scalar>(lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
      }
  }
};

// ---------------------------------------------------------------------------
// Training state, checkpoints, training loop

using TrainScalar = float;

struct ModelState {
  ModelConfig config;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  ModelParams<TrainScalar> params;
  Adam<TrainScalar> adam;

  bool operator==(const ModelState& o) const;
};

struct EpochLog {
  std::uint64_t epoch = 0;
  double train_logloss = 0.0;
  double val_auc = 0.0;
  double val_logloss = 0.0;
  double wall_time = 0.0;

  nlohmann::json to_json(bool with_wall_time) const;
};

struct TrainResult {
  ModelState state;       // best-validation parameters
  std::vector<EpochLog> log;
  std::uint64_t best_epoch = 0;
};

/// Stable hash of the effective model configuration.
std::uint64_t config_hash(const ModelConfig& config);

void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

/// Freshly initialised state for `dataset` and `graphs`.
ModelState initial_state(const ModelConfig& config, const Dataset& dataset, const GraphSet& graphs,
                         std::uint64_t seed);

using EpochCallback = std::function<void(const EpochLog&)>;

TrainResult train(const ModelConfig& config, const Dataset& dataset, const GraphSet& graphs,
                  std::uint64_t seed, const EpochCallback& on_epoch = {});

/// Clamped click probabilities for `instances` under `state`.
std::vector<double> predict(const ModelState& state, const Dataset& dataset, const GraphSet& graphs,
                            std::span<const Instance> instances);

/// Enhanced table P of a trained model (base-only: the raw embeddings).
Matrix<TrainScalar> enhanced_embeddings(const ModelState& state, const Dataset& dataset,
                                        const GraphSet& graphs);

// ---------------------------------------------------------------------------
// Serving from dumped embeddings

/// Scores one instance from a fixed table with the base-model head; counts
/// multiply-adds so serving cost can be compared across models.
class Scorer {
 public:
  Scorer(Matrix<TrainScalar> table, Mlp<TrainScalar> mlp, SlotLayout layout, FeatureVocabulary vocab);

  double score(const Instance& instance);
  std::uint64_t operations() const { return ops_; }
  void reset_operations() { ops_ = 0; }

 private:
  Matrix<TrainScalar> table_;
  Mlp<TrainScalar> mlp_;
  SlotLayout layout_;
  FeatureVocabulary vocab_;
  std::uint64_t ops_ = 0;
};

void write_embeddings(const Matrix<TrainScalar>& table, const std::filesystem::path& path);
Matrix<TrainScalar> read_embeddings(const std::filesystem::path& path);

}  // namespace dgenn
