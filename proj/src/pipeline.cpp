#include "dgenn/pipeline.hpp"

#include <sstream>

#include "dgenn/synthgen.hpp"

namespace dgenn {

namespace {

Experiment prepare(const RawDataset& raw, const RunConfig& config) {
  Experiment e;
  NegativeSampling sampling = config.sampling;
  sampling.seed = config.seed;
  e.dataset = build_dataset(raw, sampling);
  e.graphs = build_graphs(e.dataset, config.similarity, config.threads);
  return e;
}

}  // namespace

Experiment prepare_synthetic(const RunConfig& config) {
  const SynthLog log = generate(config.synth);
  std::istringstream in(log.csv);
  return prepare(parse_interactions(in, log.schema), config);
}

Experiment prepare_from_log(const RunConfig& config, const std::filesystem::path& log, const Schema& schema) {
  return prepare(parse_interactions(log, schema), config);
}

VariantOutcome run_variant(const Experiment& experiment, const ModelConfig& model, const EvalConfig& eval,
                           std::uint64_t seed) {
  VariantOutcome out;
  out.training = train(model, experiment.dataset, experiment.graphs, seed);
  const auto& test = experiment.dataset.test;
  out.test_scores = predict(out.training.state, experiment.dataset, experiment.graphs, test);
  std::vector<std::uint8_t> labels;
  labels.reserve(test.size());
  for (const auto& x : test) labels.push_back(x.label);
  out.test = metrics::evaluate(out.test_scores, labels);
  out.by_frequency = metrics::slice_by_feature_frequency(test, out.test_scores, experiment.dataset.vocabulary,
                                                         eval.frequency_buckets);
  out.by_length = metrics::slice_by_behavior_length(test, out.test_scores, eval.length_buckets);
  return out;
}

std::string metrics_log_text(const TrainResult& result, bool with_wall_time) {
  std::string s;
  for (const auto& e : result.log) s += e.to_json(with_wall_time).dump() + "\n";
  return s;
}

nlohmann::json graph_stats(const GraphSet& graphs) {
  auto one = [](const SparseGraph& g) {
    nlohmann::json hist = nlohmann::json::object();
    std::uint64_t isolated = 0;
    std::uint32_t max_degree = 0;
    for (const auto& [deg, count] : degree_histogram(g)) {
      hist[std::to_string(deg)] = count;
      if (deg == 0) isolated = count;
      max_degree = std::max(max_degree, deg);
    }
    return nlohmann::json{{"nodes", g.node_count()},
                          {"edges", g.edge_count()},
                          {"isolated", isolated},
                          {"max_degree", max_degree},
                          {"degree_histogram", hist}};
  };
  nlohmann::json j;
  for (std::size_t t = 0; t < graphs.user_fields.size(); ++t) j["ua_" + std::to_string(t)] = one(graphs.user_fields[t].graph);
  for (std::size_t t = 0; t < graphs.item_fields.size(); ++t) j["vb_" + std::to_string(t)] = one(graphs.item_fields[t].graph);
  j["uu"] = one(graphs.uu);
  j["vv"] = one(graphs.vv);
  j["uv"] = one(graphs.uv);
  j["cf"] = one(graphs.cf);
  return j;
}

}  // namespace dgenn
