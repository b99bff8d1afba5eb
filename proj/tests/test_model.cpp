#include <cmath>
#include <fstream>
#include <random>

#include "doctest.h"

#include "dgenn/gradcheck.hpp"
#include "dgenn/model.hpp"
#include "support.hpp"

using namespace dgenn;
namespace ts = testsupport;
using Vec = Vector<double>;
using Mat = Matrix<double>;

namespace {

Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Index>(xs.size()));
  Index k = 0;
  for (double x : xs) v[k++] = x;
  return v;
}

struct Setup {
  GradCheckFixture fx;
  Network<double> net;
  EncodedBatch batch;
  ModelParams<double> params;
};

Setup setup(AggregatorKind kind, bool full = true, double l2 = 1e-2, std::uint64_t seed = 5) {
  Setup s;
  s.fx = builtin_fixture(kind, PoolMode::Sum, full);
  s.fx.config.l2 = l2;
  s.net = make_network<double>(s.fx.config, s.fx.dataset.vocabulary, s.fx.graphs);
  s.batch = encode(s.net.layout, s.fx.dataset.vocabulary, s.fx.dataset.train);
  std::mt19937_64 rng(seed);
  s.params = init_params<double>(s.fx.config, s.fx.dataset.vocabulary.total(),
                                 s.fx.graphs.user_fields.size() + s.fx.graphs.item_fields.size(),
                                 s.net.layout.count(), rng);
  return s;
}

/// users x items grid whose labels follow the sign of a hidden inner product.
Dataset separable_dataset(std::uint32_t users, std::uint32_t items, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const ts::Dense eu = ts::random_dense(users, 3, rng), ev = ts::random_dense(items, 3, rng);
  std::vector<FieldInfo> fields(2);
  fields[0] = {"user", FieldRole::User, 0, 0, {}};
  fields[1] = {"item", FieldRole::Item, 0, 0, {}};
  for (std::uint32_t u = 0; u < users; ++u) fields[0].tokens.push_back("u" + std::to_string(u));
  for (std::uint32_t v = 0; v < items; ++v) fields[1].tokens.push_back("i" + std::to_string(v));
  Dataset ds;
  ds.vocabulary = FeatureVocabulary(std::move(fields));
  ds.user_attributes.assign(users, {});
  ds.item_attributes.assign(items, {});
  ds.interactions = InteractionMatrix::from_rows(items, std::vector<std::vector<std::uint32_t>>(users));
  for (std::uint32_t u = 0; u < users; ++u)
    for (std::uint32_t v = 0; v < items; ++v) {
      Instance x;
      x.user = u;
      x.item = users + v;
      x.label = eu.row(u).dot(ev.row(v)) > 0 ? 1 : 0;
      ds.train.push_back(x);
    }
  ds.val = ds.train;
  ds.test = ds.train;
  ds.vocabulary.frequency = count_frequency(ds.vocabulary, ds.train);
  return ds;
}

GraphSet empty_graphs(const Dataset& ds) {
  GraphSet g;
  g.uu = SparseGraph(ds.vocabulary.num_users());
  g.vv = SparseGraph(ds.vocabulary.num_items());
  g.uv = build_bipartite(ds.interactions);
  g.cf = merge_collaborative(g.uu, g.uv, g.vv);
  return g;
}

}  // namespace

TEST_CASE("pool_multivalued") {
  const std::vector<Vec> one{vec({1.5, -2})};
  CHECK(pool_multivalued<double>(one, 2) == one[0]);
  const std::vector<Vec> two{vec({1, 0}), vec({0, 1})};
  CHECK(pool_multivalued<double>(two, 2) == vec({0.5, 0.5}));
  CHECK(pool_multivalued<double>({}, 3) == Vec::Zero(3));
}

TEST_CASE("inner_product_layer") {
  const std::vector<Vec> ortho{vec({1, 0}), vec({0, 1})};
  CHECK(inner_product_layer<double>(ortho) == vec({1, 0, 0, 1, 0}));
  const std::vector<Vec> same{vec({1, 1}), vec({1, 1})};
  CHECK(inner_product_layer<double>(same) == vec({1, 1, 1, 1, 2}));

  std::mt19937_64 rng(1);
  std::vector<Vec> three;
  for (int f = 0; f < 3; ++f) three.push_back(ts::random_dense(4, 1, rng));
  const Vec out = inner_product_layer<double>(three);
  REQUIRE(out.size() == 15);
  CHECK(representation_width(3, 4) == 15);
  Index k = 0;
  for (int f = 0; f < 3; ++f)
    for (int j = 0; j < 4; ++j) CHECK(out[k++] == three[f][j]);
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b) {
      double dot = 0.0;
      for (int j = 0; j < 4; ++j) dot += three[a][j] * three[b][j];
      CHECK(out[k++] == doctest::Approx(dot).epsilon(1e-14));
    }
  const std::vector<Vec> single{vec({1})};
  CHECK_THROWS_AS(inner_product_layer<double>(single), NumericError);
}

TEST_CASE("mlp_forward") {
  Mlp<double> zero;
  zero.w = {Mat::Zero(3, 5), Mat::Zero(1, 3)};
  zero.b = {Vec::Zero(3), Vec::Zero(1)};
  CHECK(mlp_forward<double>(Vec::Ones(5), zero) == 0.5);

  auto saturated = zero;
  saturated.b[1][0] = 50.0;
  CHECK(mlp_forward<double>(Vec::Ones(5), saturated) == 1.0 - 1e-7);
  saturated.b[1][0] = -50.0;
  CHECK(mlp_forward<double>(Vec::Ones(5), saturated) == 1e-7);

  // a1 = relu([1 -1; 2 0.5] x + [0.1, -4.5]) with x = [2, 1]: [1.1, 0]
  // z = [0.5 4] a1 - 0.05 = 0.5
  Mlp<double> hand;
  hand.w = {(Mat(2, 2) << 1, -1, 2, 0.5).finished(), (Mat(1, 2) << 0.5, 4).finished()};
  hand.b = {vec({0.1, -4.5}), vec({-0.05})};
  const double expected = 1.0 / (1.0 + std::exp(-0.5));
  CHECK(std::abs(mlp_forward<double>(vec({2, 1}), hand) - expected) < 1e-12);

  Mlp<double> wrong = zero;
  wrong.w.back() = Mat::Zero(2, 3);
  wrong.b.back() = Vec::Zero(2);
  CHECK_THROWS_AS(mlp_forward<double>(Vec::Ones(5), wrong), NumericError);
}

TEST_CASE("logloss") {
  const std::vector<double> half(4, 0.5);
  const std::vector<std::uint8_t> labels{1, 0, 1, 0};
  CHECK(std::abs(logloss<double, std::uint8_t>(half, labels) - std::log(2.0)) < 1e-15);
  const std::vector<double> perfect{1.0 - 1e-7};
  const std::vector<std::uint8_t> one{1};
  CHECK(logloss<double, std::uint8_t>(perfect, one) == doctest::Approx(1e-7).epsilon(1e-6));
  const std::vector<double> p{0.9, 0.2};
  const std::vector<std::uint8_t> y{1, 0};
  CHECK(logloss<double, std::uint8_t>(p, y) == doctest::Approx(0.164252).epsilon(1e-6));
  CHECK_THROWS_AS((logloss<double, std::uint8_t>({}, {})), NumericError);
}

TEST_CASE("encode: slot layout order") {
  const auto fx = builtin_fixture(AggregatorKind::LightGCN, PoolMode::Sum, true);
  const auto& vocab = fx.dataset.vocabulary;
  const auto layout = SlotLayout::from(vocab);
  CHECK(layout.count() == 6);
  const auto b = encode(layout, vocab, fx.dataset.train);
  const auto& x = fx.dataset.train[0];
  CHECK(b.slot(0, 0).size() == 1);
  CHECK(b.slot(0, 0)[0] == x.user);
  CHECK(b.slot(0, 1)[0] == x.item);
  CHECK(std::vector<FeatureId>(b.slot(0, 2).begin(), b.slot(0, 2).end()) == x.user_attrs);
  CHECK(std::vector<FeatureId>(b.slot(0, 3).begin(), b.slot(0, 3).end()) == x.item_attrs);
  CHECK(std::vector<FeatureId>(b.slot(0, 4).begin(), b.slot(0, 4).end()) == x.behaviors);
  CHECK(std::vector<FeatureId>(b.slot(0, 5).begin(), b.slot(0, 5).end()) == x.context);
  CHECK(b.slot(4, 4).empty());
  const std::size_t rows[] = {3, 1};
  const auto sub = b.subset(rows);
  CHECK(sub.size() == 2);
  CHECK(sub.labels[0] == b.labels[3]);
  CHECK(std::vector<FeatureId>(sub.slot(0, 4).begin(), sub.slot(0, 4).end()) ==
        std::vector<FeatureId>(b.slot(3, 4).begin(), b.slot(3, 4).end()));
  CHECK(SlotLayout::from(vocab, false).count() == 5);
}

TEST_CASE("backward: zero-weight MLP with balanced labels gives zero output bias gradient") {
  auto s = setup(AggregatorKind::GCN, true, 0.0);
  for (auto& w : s.params.mlp.w) w.setZero();
  for (auto& b : s.params.mlp.b) b.setZero();
  REQUIRE(std::count(s.batch.labels.begin(), s.batch.labels.end(), 1) * 2 == s.batch.size());
  ModelParams<double> g;
  s.net.gradient(s.params, s.batch, g);
  CHECK(std::abs(g.mlp.b.back()[0]) < 1e-15);
}

TEST_CASE("backward: unreachable embeddings receive zero gradient") {
  auto s = setup(AggregatorKind::NGCF, true, 0.0);
  // Attach an extra user that appears in no instance and no graph.
  auto vocab_fields = s.fx.dataset.vocabulary.fields();
  auto fx = s.fx;
  fx.dataset.vocabulary = FeatureVocabulary([&] {
    auto f = vocab_fields;
    f[0].tokens.push_back("u_lonely");
    return f;
  }());
  // Shift every id at or above the new user's slot by one.
  const FeatureId cut = 4;
  auto shift = [&](FeatureId& id) { id += id >= cut ? 1 : 0; };
  for (auto* split : {&fx.dataset.train, &fx.dataset.val, &fx.dataset.test})
    for (auto& x : *split) {
      shift(x.user);
      shift(x.item);
      for (auto& a : x.user_attrs) shift(a);
      for (auto& a : x.item_attrs) shift(a);
      for (auto& a : x.behaviors) shift(a);
      for (auto& a : x.context) shift(a);
    }
  for (auto& row : fx.dataset.user_attributes)
    for (auto& a : row) shift(a);
  fx.dataset.user_attributes.push_back({});
  for (auto& row : fx.dataset.item_attributes)
    for (auto& a : row) shift(a);
  auto rows = std::vector<std::vector<std::uint32_t>>{{0, 1}, {1, 2}, {2}, {3, 0}, {}};
  fx.dataset.interactions = InteractionMatrix::from_rows(4, rows);
  const auto& v = fx.dataset.vocabulary;
  GraphSet& gs = fx.graphs;
  gs.user_fields = {build_attribute_graph(fx.dataset.user_attributes, 0, v, 2)};
  gs.item_fields = {build_attribute_graph(fx.dataset.item_attributes, v.item_offset(), v, 3)};
  const std::vector<Edge> uu{{0, 1, EdgeType::UU}, {1, 2, EdgeType::UU}};
  const std::vector<Edge> vv{{0, 1, EdgeType::VV}, {1, 3, EdgeType::VV}};
  gs.uu = SparseGraph::from_edges(5, uu);
  gs.vv = SparseGraph::from_edges(4, vv);
  gs.uv = build_bipartite(fx.dataset.interactions);
  gs.cf = merge_collaborative(gs.uu, gs.uv, gs.vv);

  const auto net = make_network<double>(fx.config, v, gs);
  const auto batch = encode(net.layout, v, fx.dataset.train);
  std::mt19937_64 rng(3);
  auto params = init_params<double>(fx.config, v.total(), 2, net.layout.count(), rng);
  ModelParams<double> g;
  net.gradient(params, batch, g);
  CHECK(g.embeddings.row(cut).cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.embeddings.row(0).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("backward: the L2 term adds exactly lambda * theta") {
  auto with = setup(AggregatorKind::GCN, true, 0.03);
  auto without = setup(AggregatorKind::GCN, true, 0.0);
  ModelParams<double> ga, gb;
  const double la = with.net.gradient(with.params, with.batch, ga);
  const double lb = without.net.gradient(without.params, without.batch, gb);
  CHECK(la - lb == doctest::Approx(with.net.penalty(with.params)).epsilon(1e-12));
  const auto pa = with.params.tensors();
  const auto ta = ga.tensors();
  const auto tb = gb.tensors();
  for (std::size_t t = 0; t < ta.size(); ++t)
    for (Index i = 0; i < ta[t].size; ++i) {
      const double reg = pa[t].decay ? 0.03 * pa[t].data[i] : 0.0;
      CHECK(ta[t].data[i] == doctest::Approx(tb[t].data[i] + reg).epsilon(1e-12));
    }
  for (const auto& t : pa)
    if (t.name.rfind("mlp.b", 0) == 0) CHECK_FALSE(t.decay);
}

TEST_CASE("backward: finite differences for every aggregator, pooling mode and fixture shape") {
  for (auto kind : {AggregatorKind::LightGCN, AggregatorKind::GCN, AggregatorKind::NGCF})
    for (auto pool : {PoolMode::Sum, PoolMode::Mean})
      for (bool full : {false, true}) {
        const auto r = gradient_check(builtin_fixture(kind, pool, full));
        INFO(to_string(kind), " ", to_string(pool), " full=", full, " worst=", r.worst);
        CHECK(r.max_rel_error < 1e-4);
        CHECK(r.checked > 0);
        CHECK(r.checked > 10 * r.kink_crossings);
      }
}

TEST_CASE("backward: non-finite gradients name the tensor") {
  auto s = setup(AggregatorKind::LightGCN, true, 0.0);
  s.params.mlp.w[0](0, 0) = std::numeric_limits<double>::infinity();
  ModelParams<double> g;
  CHECK_THROWS_AS(s.net.gradient(s.params, s.batch, g), NumericError);
}

TEST_CASE("dropout: rate 0 is the identity and evaluation never drops") {
  auto s = setup(AggregatorKind::LightGCN, true, 0.0);
  const Mat table = s.net.enhanced_table(s.params, nullptr);
  const Vec eval = s.net.head(s.params, table, s.batch, nullptr, false, 0);
  CHECK(s.net.head(s.params, table, s.batch, nullptr, true, 9) == eval);
  s.net.dropout = 0.5;
  CHECK(s.net.head(s.params, table, s.batch, nullptr, false, 9) == eval);
  CHECK(s.net.predict(s.params, s.batch) == eval);
  const Vec train = s.net.head(s.params, table, s.batch, nullptr, true, 9);
  CHECK((train - eval).cwiseAbs().maxCoeff() > 0.0);
  CHECK(s.net.head(s.params, table, s.batch, nullptr, true, 9) == train);
}

TEST_CASE("dropout: gradient matches finite differences under a fixed mask") {
  auto s = setup(AggregatorKind::LightGCN, true, 0.0);
  s.net.dropout = 0.3;
  ModelParams<double> g;
  s.net.gradient(s.params, s.batch, g, true, 17);
  const double eps = 1e-6;
  double worst = 0.0;
  for (std::size_t l = 0; l < s.params.mlp.w.size(); ++l)
    for (Index i = 0; i < s.params.mlp.w[l].size(); ++i) {
      auto p = s.params, m = s.params;
      p.mlp.w[l].data()[i] += eps;
      m.mlp.w[l].data()[i] -= eps;
      if (s.net.activation_pattern(p, s.batch) != s.net.activation_pattern(m, s.batch)) continue;
      const double num = (s.net.objective(p, s.batch, true, 17) - s.net.objective(m, s.batch, true, 17)) / (2 * eps);
      const double a = g.mlp.w[l].data()[i];
      worst = std::max(worst, std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-6}));
    }
  CHECK(worst < 1e-4);
}

TEST_CASE("gradient descent: loss decreases over five small full-batch steps") {
  auto s = setup(AggregatorKind::NGCF, true, 1e-2);
  ModelParams<double> g;
  double prev = s.net.gradient(s.params, s.batch, g);
  for (int step = 0; step < 5; ++step) {
    auto pt = s.params.tensors();
    const auto gt = g.tensors();
    for (std::size_t t = 0; t < pt.size(); ++t)
      for (Index i = 0; i < pt[t].size; ++i) pt[t].data[i] -= 1e-3 * gt[t].data[i];
    const double next = s.net.gradient(s.params, s.batch, g);
    CHECK(next < prev);
    prev = next;
  }
}

TEST_CASE("adam: first step moves each parameter by lr against the gradient sign") {
  auto s = setup(AggregatorKind::GCN, true, 0.0);
  ModelParams<double> g;
  s.net.gradient(s.params, s.batch, g);
  auto adam = Adam<double>::make(s.params, 0.01);
  const auto before = s.params;
  adam.update(s.params, g);
  CHECK(adam.step == 1);
  const auto b = before.tensors();
  const auto a = s.params.tensors();
  const auto gt = g.tensors();
  for (std::size_t t = 0; t < a.size(); ++t)
    for (Index i = 0; i < a[t].size; ++i) {
      const double gi = gt[t].data[i];
      const double expected = b[t].data[i] - 0.01 * gi / (std::abs(gi) + 1e-8);
      CHECK(a[t].data[i] == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("train: zero epochs returns the initial state") {
  const auto fx = builtin_fixture(AggregatorKind::GCN);
  auto config = fx.config;
  config.epochs = 0;
  const auto r = train(config, fx.dataset, fx.graphs, 3);
  CHECK(r.log.empty());
  CHECK(r.state == initial_state(config, fx.dataset, fx.graphs, 3));
}

TEST_CASE("train: separable two-field data reaches near zero logloss") {
  const auto ds = separable_dataset(20, 20, 4);
  const auto gs = empty_graphs(ds);
  ModelConfig c;
  c.ablation = Ablation::BaseOnly;
  c.embedding_dim = 8;
  c.mlp = {16, 1};
  c.lr = 0.02;
  c.batch_size = 50;
  c.epochs = 50;
  c.patience = 50;
  c.log_wall_time = false;
  const auto r = train(c, ds, gs, 1);
  REQUIRE(r.log.size() == 50);
  INFO("final train logloss ", r.log.back().train_logloss);
  CHECK(r.log.back().train_logloss < 0.05);
}

TEST_CASE("train: deterministic under a fixed seed, checkpoint round trip is bitwise") {
  const auto fx = builtin_fixture(AggregatorKind::NGCF, PoolMode::Sum, true);
  auto c = fx.config;
  c.epochs = 4;
  c.patience = 10;
  c.batch_size = 4;
  c.dropout = 0.2;
  c.mlp = {8, 4, 1};
  const auto a = train(c, fx.dataset, fx.graphs, 11);
  const auto b = train(c, fx.dataset, fx.graphs, 11);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t e = 0; e < a.log.size(); ++e) {
    CHECK(a.log[e].train_logloss == b.log[e].train_logloss);
    CHECK(a.log[e].val_auc == b.log[e].val_auc);
  }
  CHECK(a.state == b.state);

  const auto dir = ts::scratch_dir("checkpoint");
  save_checkpoint(a.state, dir / "a.bin");
  save_checkpoint(b.state, dir / "b.bin");
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));
  const auto back = load_checkpoint(dir / "a.bin");
  CHECK(back == a.state);
  save_checkpoint(back, dir / "c.bin");
  CHECK(slurp(dir / "c.bin") == slurp(dir / "a.bin"));
  CHECK(config_hash(back.config) == config_hash(c));
  CHECK_THROWS_AS(load_checkpoint(dir / "none.bin"), MissingArtifact);
  std::ofstream(dir / "junk.bin") << "not a checkpoint";
  CHECK_THROWS(load_checkpoint(dir / "junk.bin"));

  const auto other = train(c, fx.dataset, fx.graphs, 12);
  CHECK_FALSE(other.state == a.state);
}

TEST_CASE("scorer: matches the network and touches no graph") {
  const auto fx = builtin_fixture(AggregatorKind::LightGCN, PoolMode::Sum, true);
  auto c = fx.config;
  c.epochs = 2;
  const auto r = train(c, fx.dataset, fx.graphs, 2);
  const auto table = enhanced_embeddings(r.state, fx.dataset, fx.graphs);
  const auto expected = predict(r.state, fx.dataset, fx.graphs, fx.dataset.test);

  const auto dir = ts::scratch_dir("scorer");
  write_embeddings(table, dir / "emb.bin");
  const auto loaded = read_embeddings(dir / "emb.bin");
  CHECK(loaded == table);

  Scorer scorer(loaded, r.state.params.mlp, SlotLayout::from(fx.dataset.vocabulary), fx.dataset.vocabulary);
  const auto before = propagation_counter().load();
  for (std::size_t i = 0; i < fx.dataset.test.size(); ++i) {
    scorer.reset_operations();
    CHECK(scorer.score(fx.dataset.test[i]) == doctest::Approx(expected[i]).epsilon(1e-5));
    // pooling reads, pairwise products, and one multiply-add per MLP weight
    const auto& x = fx.dataset.test[i];
    const std::uint64_t d = c.embedding_dim, f = 6;
    const std::uint64_t ids = 2 + x.user_attrs.size() + x.item_attrs.size() + x.behaviors.size() + x.context.size();
    std::uint64_t weights = 0;
    for (const auto& w : r.state.params.mlp.w) weights += static_cast<std::uint64_t>(w.size());
    CHECK(scorer.operations() == ids * d + f * (f - 1) / 2 * d + weights);
  }
  CHECK(propagation_counter().load() == before);
  CHECK_THROWS_AS(read_embeddings(dir / "none.bin"), MissingArtifact);
}

TEST_CASE("model config json round trip and validation") {
  ModelConfig c;
  c.aggregator = AggregatorKind::NGCF;
  c.pool = PoolMode::Mean;
  c.mlp = {32, 1};
  c.ablation = Ablation::UvOnly;
  const auto back = ModelConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(config_hash(back) == config_hash(c));
  auto bad = c.to_json();
  bad["learning_rate"] = 0.1;
  CHECK_THROWS_AS(ModelConfig::from_json(bad), ConfigError);
  for (auto [key, value] : std::vector<std::pair<const char*, nlohmann::json>>{
           {"attr_layers", 0}, {"stage1_layers", 5}, {"mlp", nlohmann::json::array({8, 2})}, {"lr", 0.0}, {"dropout", 1.0}}) {
    auto j = c.to_json();
    j[key] = value;
    INFO(key);
    CHECK_THROWS_AS(ModelConfig::from_json(j), ConfigError);
  }
  CHECK(ablation_from("uu-vv-only") == Ablation::UuVvOnly);
  CHECK_THROWS_AS(ablation_from("everything"), ConfigError);
}
