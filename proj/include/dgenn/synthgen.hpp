#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dgenn/data.hpp"

namespace dgenn {

struct SynthField {
  std::string name;
  std::uint32_t cardinality = 1;
};

/// Latent-factor click simulator with clustered users/items, attributes
/// that (noisily) reveal the cluster, power-law behavior lengths and a
/// sequential component so consecutive items are related.
struct SynthConfig {
  std::uint32_t users = 200;
  std::uint32_t items = 200;
  std::uint32_t latent_dim = 8;
  std::uint32_t clusters = 10;
  double cluster_spread = 0.6;  // latent noise around the cluster centroid
  std::vector<SynthField> user_fields{{"age", 8}, {"city", 30}};
  std::vector<SynthField> item_fields{{"category", 20}, {"brand", 120}};
  double affinity = 0.7;       // P(attribute follows the cluster)
  double exponent = 2.0;       // behavior-length power law
  std::uint32_t min_length = 4;
  std::uint32_t max_length = 100;
  std::optional<std::uint32_t> fixed_length;
  double sharpness = 3.0;      // inverse temperature of the click softmax
  double transition = 0.5;     // weight of the previous item's latent
  double noise = 0.1;          // P(click is a uniform random item)
  std::uint32_t action_types = 4;
  std::uint64_t seed = 7;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

struct SynthLog {
  std::string csv;  // header + one row per click
  Schema schema;
  std::uint64_t rows = 0;
};

SynthLog generate(const SynthConfig& config);

/// Writes log.csv and schema.json under `dir`.
void write_synth(const SynthLog& log, const std::filesystem::path& dir);

}  // namespace dgenn
