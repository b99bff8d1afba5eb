#include "dgenn/config.hpp"

#include <algorithm>
#include <fstream>

namespace dgenn {

namespace {

void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError(where + ": unknown key '" + key + "'");
}

// Reads j[key] into `out` when present; type errors name the field.
template <typename T>
void read(const nlohmann::json& j, const char* key, const std::string& where, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

std::string read_string(const nlohmann::json& j, const char* key, const std::string& where,
                        std::string fallback) {
  read(j, key, where, fallback);
  return fallback;
}

}  // namespace

std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::None: return "none";
    case Ablation::NoAttr: return "no-attr";
    case Ablation::AttrOnly: return "attr-only";
    case Ablation::UuVvOnly: return "uu-vv-only";
    case Ablation::UvOnly: return "uv-only";
    case Ablation::BaseOnly: return "base-only";
  }
  return "?";
}

Ablation ablation_from(std::string_view s) {
  for (auto a : {Ablation::None, Ablation::NoAttr, Ablation::AttrOnly, Ablation::UuVvOnly,
                 Ablation::UvOnly, Ablation::BaseOnly})
    if (to_string(a) == s) return a;
  throw ConfigError("ablate: unknown variant '" + std::string(s) +
                    "' (none, no-attr, attr-only, uu-vv-only, uv-only, base-only)");
}

void ModelConfig::validate() const {
  if (embedding_dim < 1) throw ConfigError("model.embedding_dim: must be >= 1");
  for (auto [name, l] : {std::pair{"attr_layers", attr_layers}, std::pair{"stage1_layers", stage1_layers},
                         std::pair{"stage2_layers", stage2_layers}})
    if (l < 1 || l > 4) throw ConfigError(std::string("model.") + name + ": must be in 1..4");
  if (mlp.empty() || mlp.back() != 1) throw ConfigError("model.mlp: last layer width must be 1");
  if (std::find(mlp.begin(), mlp.end(), 0u) != mlp.end())
    throw ConfigError("model.mlp: widths must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("model.lr: must be > 0");
  if (!(l2 >= 0.0)) throw ConfigError("model.l2: must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout: must be in [0, 1)");
  if (batch_size < 1) throw ConfigError("model.batch_size: must be >= 1");
  if (!(init_std > 0.0)) throw ConfigError("model.init_std: must be > 0");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"embedding_dim", embedding_dim},
          {"aggregator", to_string(aggregator)},
          {"activation", to_string(activation)},
          {"pool", to_string(pool)},
          {"attr_layers", attr_layers},
          {"stage1_layers", stage1_layers},
          {"stage2_layers", stage2_layers},
          {"mlp", mlp},
          {"lr", lr},
          {"l2", l2},
          {"dropout", dropout},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"patience", patience},
          {"init_std", init_std},
          {"fanout", fanout},
          {"sampling_edge_threshold", sampling_edge_threshold},
          {"log_wall_time", log_wall_time},
          {"ablation", to_string(ablation)}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  const std::string w = "model";
  check_keys(j,
             {"embedding_dim", "aggregator", "activation", "pool", "attr_layers", "stage1_layers",
              "stage2_layers", "mlp", "lr", "l2", "dropout", "batch_size", "epochs", "patience",
              "init_std", "fanout", "sampling_edge_threshold", "log_wall_time", "ablation"},
             w);
  ModelConfig c;
  read(j, "embedding_dim", w, c.embedding_dim);
  c.aggregator = aggregator_from(read_string(j, "aggregator", w, std::string(to_string(c.aggregator))));
  c.activation = activation_from(read_string(j, "activation", w, std::string(to_string(c.activation))));
  c.pool = pool_mode_from(read_string(j, "pool", w, std::string(to_string(c.pool))));
  read(j, "attr_layers", w, c.attr_layers);
  read(j, "stage1_layers", w, c.stage1_layers);
  read(j, "stage2_layers", w, c.stage2_layers);
  read(j, "mlp", w, c.mlp);
  read(j, "lr", w, c.lr);
  read(j, "l2", w, c.l2);
  read(j, "dropout", w, c.dropout);
  read(j, "batch_size", w, c.batch_size);
  read(j, "epochs", w, c.epochs);
  read(j, "patience", w, c.patience);
  read(j, "init_std", w, c.init_std);
  read(j, "fanout", w, c.fanout);
  read(j, "sampling_edge_threshold", w, c.sampling_edge_threshold);
  read(j, "log_wall_time", w, c.log_wall_time);
  c.ablation = ablation_from(read_string(j, "ablation", w, std::string(to_string(c.ablation))));
  c.validate();
  return c;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  check_keys(j, {"schema", "log", "sampling", "similarity", "model", "synth", "eval", "seed", "threads"},
             "config");
  RunConfig c;
  if (j.contains("schema")) c.schema = Schema::from_json(j.at("schema"));
  if (j.contains("log")) c.log_path = read_string(j, "log", "config", "");
  read(j, "seed", "config", c.seed);
  read(j, "threads", "config", c.threads);
  if (c.threads < 1) throw ConfigError("config.threads: must be >= 1");
  if (j.contains("sampling")) {
    const auto& s = j.at("sampling");
    check_keys(s, {"n_neg", "popularity_weighted"}, "sampling");
    read(s, "n_neg", "sampling", c.sampling.n_neg);
    read(s, "popularity_weighted", "sampling", c.sampling.popularity_weighted);
    if (c.sampling.n_neg < 1) throw ConfigError("sampling.n_neg: must be >= 1");
  }
  if (j.contains("similarity")) {
    const auto& s = j.at("similarity");
    check_keys(s, {"alpha1", "alpha2", "k"}, "similarity");
    read(s, "alpha1", "similarity", c.similarity.alpha1);
    read(s, "alpha2", "similarity", c.similarity.alpha2);
    read(s, "k", "similarity", c.similarity.k);
    c.similarity.validate();
  }
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  if (j.contains("synth")) c.synth = SynthConfig::from_json(j.at("synth"));
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    check_keys(e, {"frequency_buckets", "length_buckets"}, "eval");
    read(e, "frequency_buckets", "eval", c.eval.frequency_buckets);
    read(e, "length_buckets", "eval", c.eval.length_buckets);
    for (auto* b : {&c.eval.frequency_buckets, &c.eval.length_buckets})
      if (b->empty() || !std::is_sorted(b->begin(), b->end()) ||
          std::adjacent_find(b->begin(), b->end()) != b->end())
        throw ConfigError("eval: bucket boundaries must be nonempty and strictly increasing");
  }
  c.sampling.seed = c.seed;
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("config not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return from_json(j);
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j{{"seed", seed},
                   {"threads", threads},
                   {"sampling", {{"n_neg", sampling.n_neg}, {"popularity_weighted", sampling.popularity_weighted}}},
                   {"similarity", {{"alpha1", similarity.alpha1}, {"alpha2", similarity.alpha2}, {"k", similarity.k}}},
                   {"model", model.to_json()},
                   {"synth", synth.to_json()},
                   {"eval", {{"frequency_buckets", eval.frequency_buckets}, {"length_buckets", eval.length_buckets}}}};
  if (schema) j["schema"] = schema->to_json();
  if (log_path) j["log"] = log_path->string();
  return j;
}

}  // namespace dgenn
