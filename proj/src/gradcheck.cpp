#include "dgenn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dgenn/model.hpp"

namespace dgenn {

namespace {

FieldInfo field(std::string name, FieldRole role, std::initializer_list<const char*> tokens) {
  FieldInfo f;
  f.name = std::move(name);
  f.role = role;
  for (auto t : tokens) f.tokens.emplace_back(t);
  return f;
}

}  // namespace

GradCheckFixture builtin_fixture(AggregatorKind kind, PoolMode pool, bool full) {
  GradCheckFixture fx;
  std::vector<FieldInfo> fields{field("user", FieldRole::User, {"u0", "u1", "u2", "u3"}),
                                field("item", FieldRole::Item, {"i0", "i1", "i2", "i3"}),
                                field("age", FieldRole::UserAttr, {"a0", "a1", "a2"})};
  if (full) {
    fields.push_back(field("cat", FieldRole::ItemAttr, {"c0", "c1"}));
    fields.push_back(field("action", FieldRole::Context, {"x0", "x1"}));
  }
  auto& ds = fx.dataset;
  ds.vocabulary = FeatureVocabulary(std::move(fields));
  const auto& v = ds.vocabulary;
  const FeatureId age = v.field(2).offset;
  ds.user_attributes = {{age + 0}, {age + 1}, {age + 1}, {age + 2}};
  ds.item_attributes.assign(4, {});
  if (full) {
    const FeatureId cat = v.field(3).offset;
    ds.item_attributes = {{cat + 0}, {cat + 0}, {cat + 1}, {cat + 1}};
  }
  ds.interactions = InteractionMatrix::from_rows(4, {{0, 1}, {1, 2}, {2}, {3, 0}});

  const FeatureId m = v.num_users();
  auto instance = [&](FeatureId u, FeatureId i, std::vector<FeatureId> behaviors, std::uint8_t label,
                      FeatureId ctx) {
    Instance x;
    x.user = u;
    x.item = m + i;
    x.user_attrs = ds.user_attributes[u];
    x.item_attrs = ds.item_attributes[i];
    for (auto b : behaviors) x.behaviors.push_back(m + b);
    if (full) x.context = {v.field(4).offset + ctx};
    x.label = label;
    return x;
  };
  ds.train = {instance(0, 2, {0, 1}, 1, 0), instance(0, 3, {0, 1}, 0, 1), instance(1, 3, {1}, 1, 1),
              instance(2, 0, {2, 1, 3}, 0, 0), instance(3, 1, {}, 1, 0), instance(1, 0, {2}, 0, 1)};
  ds.val = ds.train;
  ds.test = ds.train;
  ds.vocabulary.frequency = count_frequency(ds.vocabulary, ds.train);

  auto& gs = fx.graphs;
  gs.user_fields.push_back(build_attribute_graph(ds.user_attributes, 0, v, 2));
  if (full) gs.item_fields.push_back(build_attribute_graph(ds.item_attributes, v.item_offset(), v, 3));
  const std::vector<Edge> uu{{0, 1, EdgeType::UU}, {1, 2, EdgeType::UU}};
  const std::vector<Edge> vv{{0, 1, EdgeType::VV}, {1, 3, EdgeType::VV}};
  gs.uu = SparseGraph::from_edges(4, uu);
  gs.vv = SparseGraph::from_edges(4, vv);
  gs.uv = build_bipartite(ds.interactions);
  gs.cf = merge_collaborative(gs.uu, gs.uv, gs.vv);

  auto& c = fx.config;
  c.embedding_dim = 6;
  c.aggregator = kind;
  c.pool = pool;
  c.attr_layers = 2;
  c.stage1_layers = 2;
  c.stage2_layers = 2;
  c.mlp = {8, 1};
  c.l2 = 1e-2;
  c.init_std = 0.2;
  return fx;
}

GradCheckResult gradient_check(const GradCheckFixture& fx, double eps, std::uint64_t seed) {
  const auto net = make_network<double>(fx.config, fx.dataset.vocabulary, fx.graphs);
  const EncodedBatch batch = encode(net.layout, fx.dataset.vocabulary, fx.dataset.train);
  std::mt19937_64 rng(seed);
  auto params = init_params<double>(fx.config, fx.dataset.vocabulary.total(),
                                    fx.graphs.user_fields.size() + fx.graphs.item_fields.size(),
                                    net.layout.count(), rng);
  ModelParams<double> grad;
  net.gradient(params, batch, grad);
  const auto base_pattern = net.activation_pattern(params, batch);

  GradCheckResult r;
  const std::string kind(to_string(fx.config.aggregator));
  auto pt = params.tensors();
  const auto gt = grad.tensors();
  for (std::size_t t = 0; t < pt.size(); ++t) {
    std::string cls = pt[t].name;
    // attr[3].w1[0] -> attr.w1
    for (auto open = cls.find('['); open != std::string::npos; open = cls.find('['))
      cls.erase(open, cls.find(']', open) - open + 1);
    cls = kind + ":" + cls;
    double& worst_in_class = r.per_class[cls];
    for (Index i = 0; i < pt[t].size; ++i) {
      double& x = pt[t].data[i];
      const double saved = x;
      x = saved + eps;
      const double up = net.objective(params, batch);
      const bool up_same = net.activation_pattern(params, batch) == base_pattern;
      x = saved - eps;
      const double down = net.objective(params, batch);
      const bool down_same = net.activation_pattern(params, batch) == base_pattern;
      x = saved;
      if (!up_same || !down_same) {
        ++r.kink_crossings;
        continue;
      }
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = gt[t].data[i];
      const double err =
          std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      worst_in_class = std::max(worst_in_class, err);
      if (err > r.max_rel_error || r.checked == 0) {
        if (err > r.max_rel_error) r.max_rel_error = err;
        r.worst = pt[t].name + "[" + std::to_string(i) + "]";
      }
      ++r.checked;
    }
  }
  return r;
}

}  // namespace dgenn
