#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dgenn/aggregators.hpp"
#include "dgenn/data.hpp"
#include "dgenn/graphs.hpp"
#include "dgenn/synthgen.hpp"

namespace dgenn {

/// Which graph components are active; mirrors the ablation rows.
enum class Ablation { None, NoAttr, AttrOnly, UuVvOnly, UvOnly, BaseOnly };

std::string_view to_string(Ablation a);
Ablation ablation_from(std::string_view s);

struct ModelConfig {
  std::uint32_t embedding_dim = 10;
  AggregatorKind aggregator = AggregatorKind::LightGCN;
  Activation activation = Activation::LeakyReLU;
  PoolMode pool = PoolMode::Sum;
  int attr_layers = 2;
  int stage1_layers = 2;
  int stage2_layers = 2;
  std::vector<std::uint32_t> mlp{400, 400, 400, 1};
  double lr = 1e-3;
  double l2 = 0.0;
  double dropout = 0.0;
  std::uint32_t batch_size = 2000;
  std::uint32_t epochs = 20;
  std::uint32_t patience = 3;
  double init_std = 0.1;
  std::uint32_t fanout = 0;  // 0 disables neighbor sampling
  std::uint64_t sampling_edge_threshold = 2'000'000;
  bool log_wall_time = true;
  Ablation ablation = Ablation::None;

  bool use_attr_graphs() const {
    return ablation == Ablation::None || ablation == Ablation::AttrOnly;
  }
  bool use_within() const {
    return ablation == Ablation::None || ablation == Ablation::NoAttr || ablation == Ablation::UuVvOnly;
  }
  bool use_across() const {
    return ablation == Ablation::None || ablation == Ablation::NoAttr || ablation == Ablation::UvOnly;
  }

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct EvalConfig {
  std::vector<std::uint64_t> frequency_buckets{1, 10, 100};
  std::vector<std::uint64_t> length_buckets{1, 5, 20};
};

struct RunConfig {
  std::optional<Schema> schema;
  std::optional<std::filesystem::path> log_path;
  NegativeSampling sampling;
  SimilarityParams similarity;
  ModelConfig model;
  SynthConfig synth;
  EvalConfig eval;
  std::uint64_t seed = 42;
  unsigned threads = 1;

  /// Rejects unknown keys; every message names the offending field.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

}  // namespace dgenn
