#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dgenn/config.hpp"
#include "dgenn/data.hpp"
#include "dgenn/graphs.hpp"
#include "dgenn/metrics.hpp"
#include "dgenn/model.hpp"

namespace dgenn {

/// Fixed artifact names under an output directory.
struct ArtifactPaths {
  std::filesystem::path root;

  std::filesystem::path log() const { return root / "log.csv"; }
  std::filesystem::path schema() const { return root / "schema.json"; }
  std::filesystem::path bundle() const { return root / "bundle"; }
  std::filesystem::path graphs() const { return root / "graphs"; }
  std::filesystem::path checkpoint() const { return root / "checkpoint.bin"; }
  std::filesystem::path metrics_log() const { return root / "metrics.jsonl"; }
  std::filesystem::path eval_report() const { return root / "eval.json"; }
  std::filesystem::path slices_tsv() const { return root / "slices.tsv"; }
  std::filesystem::path slices_json() const { return root / "slices.json"; }
  std::filesystem::path embeddings() const { return root / "embeddings.bin"; }
  std::filesystem::path graph_stats() const { return root / "graph_stats.json"; }
};

/// Dataset plus graphs, ready for training.
struct Experiment {
  Dataset dataset;
  GraphSet graphs;
};

/// synth -> parse -> split/sample -> graphs, all in memory.
Experiment prepare_synthetic(const RunConfig& config);
Experiment prepare_from_log(const RunConfig& config, const std::filesystem::path& log, const Schema& schema);

struct VariantOutcome {
  TrainResult training;
  std::vector<double> test_scores;
  metrics::EvalReport test;
  metrics::EvalReport by_frequency;
  metrics::EvalReport by_length;
};

/// Trains one model variant and evaluates it on the test split.
VariantOutcome run_variant(const Experiment& experiment, const ModelConfig& model, const EvalConfig& eval,
                           std::uint64_t seed);

/// Metrics log: one JSON object per epoch, newline-terminated.
std::string metrics_log_text(const TrainResult& result, bool with_wall_time);

nlohmann::json graph_stats(const GraphSet& graphs);

}  // namespace dgenn
