#include "dgenn/graphs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <thread>

#include "dgenn/binary_io.hpp"

namespace dgenn {

std::string_view to_string(EdgeType t) {
  switch (t) {
    case EdgeType::UA: return "UA";
    case EdgeType::VB: return "VB";
    case EdgeType::UU: return "UU";
    case EdgeType::VV: return "VV";
    case EdgeType::UV: return "UV";
  }
  return "?";
}

SparseGraph::SparseGraph(std::uint32_t node_count)
    : node_count_(node_count), offsets_(static_cast<std::size_t>(node_count) + 1, 0) {}

SparseGraph SparseGraph::from_edges(std::uint32_t node_count, std::span<const Edge> edges) {
  std::vector<Edge> directed;
  directed.reserve(edges.size() * 2);
  for (const auto& e : edges) {
    if (e.a >= node_count || e.b >= node_count) throw DataError("edge endpoint out of range");
    if (e.a == e.b) continue;
    directed.push_back({e.a, e.b, e.type});
    directed.push_back({e.b, e.a, e.type});
  }
  std::sort(directed.begin(), directed.end());
  std::vector<Edge> unique;
  unique.reserve(directed.size());
  for (const auto& e : directed) {
    if (!unique.empty() && unique.back().a == e.a && unique.back().b == e.b) {
      if (unique.back().type != e.type)
        throw DataError("edge listed with two different types");
      continue;
    }
    unique.push_back(e);
  }
  SparseGraph g(node_count);
  g.indices_.reserve(unique.size());
  g.tags_.reserve(unique.size());
  for (const auto& e : unique) {
    ++g.offsets_[e.a + 1];
    g.indices_.push_back(e.b);
    g.tags_.push_back(e.type);
  }
  std::partial_sum(g.offsets_.begin(), g.offsets_.end(), g.offsets_.begin());
  return g;
}

bool SparseGraph::has_edge(std::uint32_t a, std::uint32_t b) const {
  const auto n = neighbors(a);
  return std::binary_search(n.begin(), n.end(), b);
}

std::vector<Edge> SparseGraph::edges() const {
  std::vector<Edge> out;
  out.reserve(edge_count());
  for (std::uint32_t a = 0; a < node_count_; ++a) {
    const auto n = neighbors(a);
    const auto t = tags(a);
    for (std::size_t k = 0; k < n.size(); ++k)
      if (a < n[k]) out.push_back({a, n[k], t[k]});
  }
  return out;
}

SparseGraph SparseGraph::filtered(EdgeMask mask) const {
  SparseGraph g(node_count_);
  for (std::uint32_t a = 0; a < node_count_; ++a) {
    const auto n = neighbors(a);
    const auto t = tags(a);
    for (std::size_t k = 0; k < n.size(); ++k) {
      if (mask & mask_of(t[k])) {
        g.indices_.push_back(n[k]);
        g.tags_.push_back(t[k]);
      }
    }
    g.offsets_[a + 1] = g.indices_.size();
  }
  return g;
}

// ---------------------------------------------------------------------------

FieldGraph build_attribute_graph(std::span<const std::vector<FeatureId>> assignments,
                                 FeatureId entity_offset, const FeatureVocabulary& vocab,
                                 std::size_t field) {
  const auto& info = vocab.field(field);
  FieldGraph fg;
  fg.side = info.role;
  fg.field = field;
  fg.entity_count = static_cast<std::uint32_t>(assignments.size());
  const auto tag = info.role == FieldRole::UserAttr ? EdgeType::UA : EdgeType::VB;

  fg.features.reserve(fg.entity_count + info.cardinality);
  for (std::uint32_t e = 0; e < fg.entity_count; ++e) fg.features.push_back(entity_offset + e);
  for (FeatureId a = 0; a < info.cardinality; ++a) fg.features.push_back(info.offset + a);

  std::vector<Edge> edges;
  for (std::uint32_t e = 0; e < fg.entity_count; ++e) {
    for (auto attr : assignments[e]) {
      if (attr < info.offset || attr >= info.offset + info.cardinality) continue;
      edges.push_back({e, fg.entity_count + (attr - info.offset), tag});
    }
  }
  fg.graph = SparseGraph::from_edges(fg.entity_count + info.cardinality, edges);
  return fg;
}

void SimilarityParams::validate() const {
  if (alpha1 < 0 || alpha2 < 0 || alpha1 + alpha2 <= 0)
    throw ConfigError("similarity: need alpha1, alpha2 >= 0 and alpha1 + alpha2 > 0");
  if (k < 1) throw ConfigError("similarity: k must be >= 1");
}

namespace {

template <typename T>
std::size_t intersection_size(std::span<const T> a, std::span<const T> b) {
  std::size_t n = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

double cosine(std::size_t overlap, std::size_t ni, std::size_t nj) {
  if (ni == 0 || nj == 0) return 0.0;
  return static_cast<double>(overlap) /
         (std::sqrt(static_cast<double>(ni)) * std::sqrt(static_cast<double>(nj)));
}

// Column -> rows transpose of a list of sorted rows.
template <typename T>
std::vector<std::vector<std::uint32_t>> invert(std::size_t rows, auto&& row_of, std::size_t cols) {
  std::vector<std::vector<std::uint32_t>> out(cols);
  for (std::uint32_t r = 0; r < rows; ++r)
    for (T c : row_of(r)) out[c].push_back(r);
  return out;
}

}  // namespace

double user_similarity(std::uint32_t i, std::uint32_t j, const InteractionMatrix& y,
                       std::span<const std::vector<FeatureId>> attrs,
                       const SimilarityParams& params) {
  const auto yi = y.row(i);
  const auto yj = y.row(j);
  std::span<const FeatureId> ai = attrs[i];
  std::span<const FeatureId> aj = attrs[j];
  return params.alpha1 * cosine(intersection_size(yi, yj), yi.size(), yj.size()) +
         params.alpha2 * cosine(intersection_size(ai, aj), ai.size(), aj.size());
}

SparseGraph build_knn_user_graph(const InteractionMatrix& y,
                                 std::span<const std::vector<FeatureId>> attrs,
                                 const SimilarityParams& params, unsigned threads) {
  params.validate();
  const std::uint32_t M = y.rows;
  if (attrs.size() != M) throw DataError("knn: attribute rows do not match users");
  if (params.k >= M) throw ConfigError("knn: k must be smaller than the number of users");

  // Attribute ids compacted to [0, A) for the inverted index.
  FeatureId max_attr = 0;
  for (const auto& a : attrs)
    if (!a.empty()) max_attr = std::max(max_attr, a.back() + 1);
  const auto by_item = invert<std::uint32_t>(M, [&](std::uint32_t u) { return y.row(u); }, y.cols);
  const auto by_attr = invert<FeatureId>(M, [&](std::uint32_t u) -> const std::vector<FeatureId>& { return attrs[u]; },
                                         max_attr);

  std::vector<std::vector<std::uint32_t>> picks(M);
  auto work = [&](std::uint32_t begin, std::uint32_t end) {
    std::vector<std::uint32_t> y_overlap(M, 0), a_overlap(M, 0);
    std::vector<std::uint32_t> touched;
    std::vector<std::pair<double, std::uint32_t>> scored;
    for (std::uint32_t i = begin; i < end; ++i) {
      touched.clear();
      for (auto v : y.row(i))
        for (auto j : by_item[v]) {
          if (y_overlap[j] == 0 && a_overlap[j] == 0) touched.push_back(j);
          ++y_overlap[j];
        }
      for (auto a : attrs[i])
        for (auto j : by_attr[a]) {
          if (y_overlap[j] == 0 && a_overlap[j] == 0) touched.push_back(j);
          ++a_overlap[j];
        }
      scored.clear();
      const auto nyi = y.row(i).size();
      const auto nai = attrs[i].size();
      for (auto j : touched) {
        if (j != i) {
          const double s = params.alpha1 * cosine(y_overlap[j], nyi, y.row(j).size()) +
                           params.alpha2 * cosine(a_overlap[j], nai, attrs[j].size());
          if (s > 0.0) scored.emplace_back(s, j);
        }
        y_overlap[j] = 0;
        a_overlap[j] = 0;
      }
      const auto k = std::min<std::size_t>(params.k, scored.size());
      std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                        [](const auto& a, const auto& b) {
                          return a.first != b.first ? a.first > b.first : a.second < b.second;
                        });
      for (std::size_t t = 0; t < k; ++t) picks[i].push_back(scored[t].second);
    }
  };

  threads = std::max(1u, threads);
  if (threads == 1) {
    work(0, M);
  } else {
    std::vector<std::thread> pool;
    const std::uint32_t chunk = (M + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const auto b = std::min<std::uint32_t>(M, t * chunk);
      const auto e = std::min<std::uint32_t>(M, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }

  std::vector<Edge> edges;
  for (std::uint32_t i = 0; i < M; ++i)
    for (auto j : picks[i]) edges.push_back({i, j, EdgeType::UU});
  return SparseGraph::from_edges(M, edges);
}

SparseGraph build_transition_graph(std::span<const std::vector<std::uint32_t>> sequences,
                                   std::uint32_t item_count) {
  std::vector<Edge> edges;
  for (const auto& seq : sequences)
    for (std::size_t t = 0; t + 1 < seq.size(); ++t)
      if (seq[t] != seq[t + 1]) edges.push_back({seq[t], seq[t + 1], EdgeType::VV});
  return SparseGraph::from_edges(item_count, edges);
}

std::vector<std::vector<std::uint32_t>> training_sequences(const Dataset& dataset) {
  const auto offset = dataset.vocabulary.item_offset();
  std::vector<std::vector<std::uint32_t>> out;
  for (const auto& x : dataset.train) {
    if (x.label != 1) continue;
    auto& seq = out.emplace_back();
    for (auto b : x.behaviors) seq.push_back(b - offset);
  }
  return out;
}

SparseGraph build_bipartite(const InteractionMatrix& y) {
  std::vector<Edge> edges;
  edges.reserve(y.nnz());
  for (std::uint32_t u = 0; u < y.rows; ++u)
    for (auto v : y.row(u)) edges.push_back({u, y.rows + v, EdgeType::UV});
  return SparseGraph::from_edges(y.rows + y.cols, edges);
}

SparseGraph merge_collaborative(const SparseGraph& uu, const SparseGraph& uv, const SparseGraph& vv) {
  const auto M = uu.node_count();
  if (static_cast<std::uint64_t>(M) + vv.node_count() != uv.node_count())
    throw DataError("merge: user and item node ranges do not tile the bipartite graph");
  std::vector<Edge> edges;
  for (const auto& e : uu.edges()) {
    if (e.type != EdgeType::UU) throw DataError("merge: user graph carries non-UU edge");
    edges.push_back(e);
  }
  for (const auto& e : uv.edges()) {
    if (e.type != EdgeType::UV || e.a >= M || e.b < M)
      throw DataError("merge: bipartite edge does not join a user to an item");
    edges.push_back(e);
  }
  for (const auto& e : vv.edges()) {
    if (e.type != EdgeType::VV) throw DataError("merge: item graph carries non-VV edge");
    edges.push_back({e.a + M, e.b + M, EdgeType::VV});
  }
  return SparseGraph::from_edges(uv.node_count(), edges);
}

namespace {
std::uint64_t mix(std::uint64_t seed, std::uint64_t node, std::uint64_t epoch) {
  // splitmix64 finalizer over a combined key
  std::uint64_t z = seed ^ (node * 0x9E3779B97F4A7C15ull) ^ (epoch * 0xC2B2AE3D27D4EB4Full);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}
}  // namespace

std::vector<std::uint32_t> sample_neighbors(const SparseGraph& graph, std::uint32_t node,
                                            std::uint32_t fanout, std::uint64_t seed,
                                            std::uint64_t epoch) {
  if (fanout < 1) throw ConfigError("fanout must be >= 1");
  const auto n = graph.neighbors(node);
  std::vector<std::uint32_t> out;
  if (n.size() <= fanout) return {n.begin(), n.end()};
  out.reserve(fanout);
  std::mt19937_64 rng(mix(seed, node, epoch));
  std::sample(n.begin(), n.end(), std::back_inserter(out), fanout, rng);
  return out;
}

SparseGraph sample_graph(const SparseGraph& graph, std::uint32_t fanout, std::uint64_t seed,
                         std::uint64_t epoch) {
  std::vector<Edge> edges;
  for (std::uint32_t a = 0; a < graph.node_count(); ++a) {
    const auto nbrs = graph.neighbors(a);
    const auto tags = graph.tags(a);
    for (auto b : sample_neighbors(graph, a, fanout, seed, epoch)) {
      const auto pos = std::lower_bound(nbrs.begin(), nbrs.end(), b) - nbrs.begin();
      edges.push_back({a, b, tags[static_cast<std::size_t>(pos)]});
    }
  }
  return SparseGraph::from_edges(graph.node_count(), edges);
}

// ---------------------------------------------------------------------------
// IO

void write_graph(std::ostream& out, const SparseGraph& g) {
  io::write_magic(out, "DGGR");
  io::write_pod<std::uint64_t>(out, g.node_count());
  io::write_pod<std::uint64_t>(out, g.edge_count());
  io::write_pod<std::uint8_t>(out, 1);  // tag array present
  io::write_span<std::uint64_t>(out, g.offsets());
  io::write_span<std::uint32_t>(out, g.indices());
  io::write_span<EdgeType>(out, g.tag_array());
}

SparseGraph read_graph(std::istream& in) {
  io::expect_magic(in, "DGGR", "graph file");
  const auto nodes = io::read_pod<std::uint64_t>(in);
  const auto edges = io::read_pod<std::uint64_t>(in);
  const auto has_tags = io::read_pod<std::uint8_t>(in);
  SparseGraph g(static_cast<std::uint32_t>(nodes));
  g.offsets_.resize(nodes + 1);
  io::read_into<std::uint64_t>(in, g.offsets_);
  g.indices_.resize(edges * 2);
  io::read_into<std::uint32_t>(in, g.indices_);
  g.tags_.assign(edges * 2, EdgeType::UV);
  if (has_tags) io::read_into<EdgeType>(in, g.tags_);
  if (g.offsets_.back() != g.indices_.size()) throw DataError("graph file: inconsistent CSR");
  return g;
}

void save_graph(const SparseGraph& g, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_graph(out, g);
}

SparseGraph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("graph not found: " + path.string());
  return read_graph(in);
}

std::map<std::uint32_t, std::uint64_t> degree_histogram(const SparseGraph& g) {
  std::map<std::uint32_t, std::uint64_t> h;
  for (std::uint32_t n = 0; n < g.node_count(); ++n) ++h[g.degree(n)];
  return h;
}

GraphSet build_graphs(const Dataset& dataset, const SimilarityParams& params, unsigned threads) {
  const auto& vocab = dataset.vocabulary;
  GraphSet gs;
  for (auto f : vocab.fields_with_role(FieldRole::UserAttr))
    gs.user_fields.push_back(build_attribute_graph(dataset.user_attributes, 0, vocab, f));
  for (auto f : vocab.fields_with_role(FieldRole::ItemAttr))
    gs.item_fields.push_back(
        build_attribute_graph(dataset.item_attributes, vocab.item_offset(), vocab, f));
  gs.uu = build_knn_user_graph(dataset.interactions, dataset.user_attributes, params, threads);
  gs.vv = build_transition_graph(training_sequences(dataset), vocab.num_items());
  gs.uv = build_bipartite(dataset.interactions);
  gs.cf = merge_collaborative(gs.uu, gs.uv, gs.vv);
  return gs;
}

void save_graphs(const GraphSet& graphs, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t t = 0; t < graphs.user_fields.size(); ++t)
    save_graph(graphs.user_fields[t].graph, dir / ("ua_" + std::to_string(t) + ".bin"));
  for (std::size_t t = 0; t < graphs.item_fields.size(); ++t)
    save_graph(graphs.item_fields[t].graph, dir / ("vb_" + std::to_string(t) + ".bin"));
  save_graph(graphs.uu, dir / "uu.bin");
  save_graph(graphs.vv, dir / "vv.bin");
  save_graph(graphs.uv, dir / "uv.bin");
  save_graph(graphs.cf, dir / "cf.bin");
}

GraphSet load_graphs(const std::filesystem::path& dir, const Dataset& dataset) {
  const auto& vocab = dataset.vocabulary;
  GraphSet gs;
  auto load_field = [&](std::size_t field, FeatureId entity_offset, std::uint32_t entities,
                        const std::string& file) {
    FieldGraph fg;
    const auto& info = vocab.field(field);
    fg.side = info.role;
    fg.field = field;
    fg.entity_count = entities;
    for (std::uint32_t e = 0; e < entities; ++e) fg.features.push_back(entity_offset + e);
    for (FeatureId a = 0; a < info.cardinality; ++a) fg.features.push_back(info.offset + a);
    fg.graph = load_graph(dir / file);
    if (fg.graph.node_count() != fg.features.size())
      throw DataError("attribute graph " + file + " does not match the vocabulary");
    return fg;
  };
  const auto uf = vocab.fields_with_role(FieldRole::UserAttr);
  for (std::size_t t = 0; t < uf.size(); ++t)
    gs.user_fields.push_back(load_field(uf[t], 0, vocab.num_users(), "ua_" + std::to_string(t) + ".bin"));
  const auto itf = vocab.fields_with_role(FieldRole::ItemAttr);
  for (std::size_t t = 0; t < itf.size(); ++t)
    gs.item_fields.push_back(
        load_field(itf[t], vocab.item_offset(), vocab.num_items(), "vb_" + std::to_string(t) + ".bin"));
  gs.uu = load_graph(dir / "uu.bin");
  gs.vv = load_graph(dir / "vv.bin");
  gs.uv = load_graph(dir / "uv.bin");
  gs.cf = load_graph(dir / "cf.bin");
  return gs;
}

}  // namespace dgenn
