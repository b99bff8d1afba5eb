#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <vector>

#include "dgenn/data.hpp"
#include "dgenn/types.hpp"

namespace dgenn {

enum class EdgeType : std::uint8_t { UA = 0, VB = 1, UU = 2, VV = 3, UV = 4 };

using EdgeMask = std::uint8_t;
constexpr EdgeMask mask_of(EdgeType t) { return static_cast<EdgeMask>(1u << static_cast<unsigned>(t)); }
constexpr EdgeMask kAllEdges = 0x1f;
constexpr EdgeMask kWithinMask = mask_of(EdgeType::UU) | mask_of(EdgeType::VV);
constexpr EdgeMask kAcrossMask = mask_of(EdgeType::UV);

std::string_view to_string(EdgeType t);

struct Edge {
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  EdgeType type = EdgeType::UV;
  auto operator<=>(const Edge&) const = default;
};

/// Undirected typed graph in CSR form. Each undirected edge appears in both
/// endpoint rows with the same tag; rows are sorted by neighbor index.
class SparseGraph {
 public:
  SparseGraph() = default;
  explicit SparseGraph(std::uint32_t node_count);

  /// Symmetrizes, drops self-loops and collapses duplicates. The same pair
  /// listed with two different tags is an error.
  static SparseGraph from_edges(std::uint32_t node_count, std::span<const Edge> edges);

  std::uint32_t node_count() const { return node_count_; }
  std::uint64_t edge_count() const { return indices_.size() / 2; }
  std::uint32_t degree(std::uint32_t n) const {
    return static_cast<std::uint32_t>(offsets_[n + 1] - offsets_[n]);
  }
  std::span<const std::uint32_t> neighbors(std::uint32_t n) const {
    return {indices_.data() + offsets_[n], indices_.data() + offsets_[n + 1]};
  }
  std::span<const EdgeType> tags(std::uint32_t n) const {
    return {tags_.data() + offsets_[n], tags_.data() + offsets_[n + 1]};
  }
  bool has_edge(std::uint32_t a, std::uint32_t b) const;

  const std::vector<std::uint64_t>& offsets() const { return offsets_; }
  const std::vector<std::uint32_t>& indices() const { return indices_; }
  const std::vector<EdgeType>& tag_array() const { return tags_; }

  /// Each undirected edge once, with a < b, sorted.
  std::vector<Edge> edges() const;
  /// Subgraph keeping only edges whose tag is in `mask`; node set unchanged.
  SparseGraph filtered(EdgeMask mask) const;

  bool operator==(const SparseGraph&) const = default;

 private:
  friend SparseGraph read_graph(std::istream& in);

  std::uint32_t node_count_ = 0;
  std::vector<std::uint64_t> offsets_{0};
  std::vector<std::uint32_t> indices_;
  std::vector<EdgeType> tags_;
};

/// Entity-attribute bipartite graph for one attribute field. Local node ids:
/// entities [0, E), then the field's attribute values [E, E + cardinality).
struct FieldGraph {
  FieldRole side = FieldRole::UserAttr;
  std::size_t field = 0;           // vocabulary field index
  SparseGraph graph;
  std::vector<FeatureId> features;  // local node -> global feature id
  std::uint32_t entity_count = 0;
};

/// `assignments[e]` lists global attribute ids of entity e (any field);
/// only ids inside `field` are used.
FieldGraph build_attribute_graph(std::span<const std::vector<FeatureId>> assignments,
                                 FeatureId entity_offset, const FeatureVocabulary& vocab,
                                 std::size_t field);

struct SimilarityParams {
  double alpha1 = 0.5;
  double alpha2 = 0.5;
  std::uint32_t k = 10;

  void validate() const;
};

/// alpha1 * cos(Y_i, Y_j) + alpha2 * cos(A_i, A_j); a cosine with an all-zero
/// side is 0. `attrs` rows are sorted attribute ids.
double user_similarity(std::uint32_t i, std::uint32_t j, const InteractionMatrix& y,
                       std::span<const std::vector<FeatureId>> attrs,
                       const SimilarityParams& params);

/// Top-k most similar users per user (ties to the smaller index, zero
/// similarity never linked), symmetrized by union.
SparseGraph build_knn_user_graph(const InteractionMatrix& y,
                                 std::span<const std::vector<FeatureId>> attrs,
                                 const SimilarityParams& params, unsigned threads = 1);

/// Undirected edge between consecutive items of every sequence (item-local ids).
SparseGraph build_transition_graph(std::span<const std::vector<std::uint32_t>> sequences,
                                   std::uint32_t item_count);

/// Training-window sequences recovered from the positive training instances.
std::vector<std::vector<std::uint32_t>> training_sequences(const Dataset& dataset);

/// User-item graph over M + N nodes, items offset by M.
SparseGraph build_bipartite(const InteractionMatrix& y);

/// Union of UU (M nodes), UV (M + N nodes) and VV (N nodes) over M + N nodes.
SparseGraph merge_collaborative(const SparseGraph& uu, const SparseGraph& uv, const SparseGraph& vv);

/// Uniform sample of min(fanout, degree) distinct neighbors, deterministic
/// in (seed, node, epoch). Returned in ascending order.
std::vector<std::uint32_t> sample_neighbors(const SparseGraph& graph, std::uint32_t node,
                                            std::uint32_t fanout, std::uint64_t seed,
                                            std::uint64_t epoch = 0);

/// Keeps edge (a, b) when a sampled b or b sampled a.
SparseGraph sample_graph(const SparseGraph& graph, std::uint32_t fanout, std::uint64_t seed,
                         std::uint64_t epoch);

void write_graph(std::ostream& out, const SparseGraph& g);
SparseGraph read_graph(std::istream& in);
void save_graph(const SparseGraph& g, const std::filesystem::path& path);
SparseGraph load_graph(const std::filesystem::path& path);

/// degree -> number of nodes with that degree.
std::map<std::uint32_t, std::uint64_t> degree_histogram(const SparseGraph& g);

/// All graphs one training run needs.
struct GraphSet {
  std::vector<FieldGraph> user_fields;
  std::vector<FieldGraph> item_fields;
  SparseGraph uu;
  SparseGraph vv;
  SparseGraph uv;
  SparseGraph cf;
};

GraphSet build_graphs(const Dataset& dataset, const SimilarityParams& params, unsigned threads = 1);
void save_graphs(const GraphSet& graphs, const std::filesystem::path& dir);
GraphSet load_graphs(const std::filesystem::path& dir, const Dataset& dataset);

}  // namespace dgenn
