#include "dgenn/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <Eigen/Dense>

namespace dgenn {

namespace {

void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

std::vector<SynthField> fields_from(const nlohmann::json& j, const std::string& where) {
  std::vector<SynthField> out;
  for (const auto& f : j) {
    check_keys(f, {"name", "cardinality"}, where);
    out.push_back({f.at("name").get<std::string>(), f.at("cardinality").get<std::uint32_t>()});
  }
  return out;
}

nlohmann::json fields_to(const std::vector<SynthField>& fs) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& f : fs) out.push_back({{"name", f.name}, {"cardinality", f.cardinality}});
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (users < 1 || items < 1 || latent_dim < 1 || clusters < 1 || min_length < 1 || action_types < 1)
    throw ConfigError("synth: counts must be >= 1");
  if (!(exponent > 1.0)) throw ConfigError("synth.exponent: must be > 1");
  if (!(noise >= 0.0 && noise < 0.5)) throw ConfigError("synth.noise: must be in [0, 0.5)");
  if (!(affinity >= 0.0 && affinity <= 1.0)) throw ConfigError("synth.affinity: must be in [0, 1]");
  if (max_length < min_length) throw ConfigError("synth.max_length: must be >= min_length");
  for (const auto& f : user_fields)
    if (f.cardinality < 1) throw ConfigError("synth.user_fields." + f.name + ": cardinality >= 1");
  for (const auto& f : item_fields)
    if (f.cardinality < 1) throw ConfigError("synth.item_fields." + f.name + ": cardinality >= 1");
  if (fixed_length && *fixed_length < 1) throw ConfigError("synth.fixed_length: must be >= 1");
}

nlohmann::json SynthConfig::to_json() const {
  nlohmann::json j{{"users", users},
                   {"items", items},
                   {"latent_dim", latent_dim},
                   {"clusters", clusters},
                   {"cluster_spread", cluster_spread},
                   {"user_fields", fields_to(user_fields)},
                   {"item_fields", fields_to(item_fields)},
                   {"affinity", affinity},
                   {"exponent", exponent},
                   {"min_length", min_length},
                   {"max_length", max_length},
                   {"sharpness", sharpness},
                   {"transition", transition},
                   {"noise", noise},
                   {"action_types", action_types},
                   {"seed", seed}};
  if (fixed_length) j["fixed_length"] = *fixed_length;
  return j;
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  check_keys(j,
             {"users", "items", "latent_dim", "clusters", "cluster_spread", "user_fields",
              "item_fields", "affinity", "exponent", "min_length", "max_length", "fixed_length",
              "sharpness", "transition", "noise", "action_types", "seed"},
             "synth");
  SynthConfig c;
  c.users = j.value("users", c.users);
  c.items = j.value("items", c.items);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.clusters = j.value("clusters", c.clusters);
  c.cluster_spread = j.value("cluster_spread", c.cluster_spread);
  if (j.contains("user_fields")) c.user_fields = fields_from(j.at("user_fields"), "synth.user_fields");
  if (j.contains("item_fields")) c.item_fields = fields_from(j.at("item_fields"), "synth.item_fields");
  c.affinity = j.value("affinity", c.affinity);
  c.exponent = j.value("exponent", c.exponent);
  c.min_length = j.value("min_length", c.min_length);
  c.max_length = j.value("max_length", c.max_length);
  if (j.contains("fixed_length")) c.fixed_length = j.at("fixed_length").get<std::uint32_t>();
  c.sharpness = j.value("sharpness", c.sharpness);
  c.transition = j.value("transition", c.transition);
  c.noise = j.value("noise", c.noise);
  c.action_types = j.value("action_types", c.action_types);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

SynthLog generate(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto dim = static_cast<Eigen::Index>(config.latent_dim);

  // Unit-norm centroids; members scatter around them.
  Eigen::MatrixXd user_centroids(config.clusters, dim), item_centroids(config.clusters, dim);
  for (auto* c : {&user_centroids, &item_centroids}) {
    for (Eigen::Index i = 0; i < c->size(); ++i) c->data()[i] = gauss(rng);
    c->rowwise().normalize();
  }
  std::uniform_int_distribution<std::uint32_t> pick_cluster(0, config.clusters - 1);
  auto draw_members = [&](std::uint32_t count, const Eigen::MatrixXd& centroids,
                          std::vector<std::uint32_t>& cluster_of) {
    Eigen::MatrixXd latent(count, dim);
    cluster_of.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      cluster_of[i] = pick_cluster(rng);
      for (Eigen::Index k = 0; k < dim; ++k)
        latent(i, k) = centroids(cluster_of[i], k) +
                       config.cluster_spread * gauss(rng) / std::sqrt(static_cast<double>(dim));
    }
    return latent;
  };
  std::vector<std::uint32_t> user_cluster, item_cluster;
  const Eigen::MatrixXd users = draw_members(config.users, user_centroids, user_cluster);
  const Eigen::MatrixXd items = draw_members(config.items, item_centroids, item_cluster);

  // Attribute values: a fixed per-cluster value with probability `affinity`.
  auto draw_attrs = [&](const std::vector<SynthField>& fields, const std::vector<std::uint32_t>& cluster_of) {
    std::vector<std::vector<std::uint32_t>> values(cluster_of.size(), std::vector<std::uint32_t>(fields.size()));
    for (std::size_t f = 0; f < fields.size(); ++f) {
      std::uniform_int_distribution<std::uint32_t> any(0, fields[f].cardinality - 1);
      std::vector<std::uint32_t> cluster_value(config.clusters);
      for (auto& v : cluster_value) v = any(rng);
      for (std::size_t e = 0; e < cluster_of.size(); ++e)
        values[e][f] = unit(rng) < config.affinity ? cluster_value[cluster_of[e]] : any(rng);
    }
    return values;
  };
  const auto user_attrs = draw_attrs(config.user_fields, user_cluster);
  const auto item_attrs = draw_attrs(config.item_fields, item_cluster);

  SynthLog log;
  std::ostringstream out;
  out << "user_id,item_id,timestamp";
  for (const auto& f : config.user_fields) out << ',' << f.name;
  for (const auto& f : config.item_fields) out << ',' << f.name;
  out << ",action\n";

  log.schema.fields.push_back({"user", "user_id", ColumnType::Id, FieldRole::User});
  log.schema.fields.push_back({"item", "item_id", ColumnType::Id, FieldRole::Item});
  log.schema.fields.push_back({"timestamp", "timestamp", ColumnType::Timestamp, FieldRole::Timestamp});
  for (const auto& f : config.user_fields)
    log.schema.fields.push_back({f.name, f.name, ColumnType::Categorical, FieldRole::UserAttr});
  for (const auto& f : config.item_fields)
    log.schema.fields.push_back({f.name, f.name, ColumnType::Categorical, FieldRole::ItemAttr});
  log.schema.fields.push_back({"action", "action", ColumnType::Categorical, FieldRole::Context});
  FieldSpec bucket{"time_bucket", "timestamp", ColumnType::Timestamp, FieldRole::Context};
  bucket.bucket_seconds = 6 * 3600;
  log.schema.fields.push_back(bucket);

  std::vector<double> action_weights(config.action_types);
  for (std::uint32_t a = 0; a < config.action_types; ++a) action_weights[a] = 1.0 / (1.0 + a);
  std::discrete_distribution<std::uint32_t> action(action_weights.begin(), action_weights.end());
  std::uniform_int_distribution<std::uint32_t> any_item(0, config.items - 1);
  std::uniform_int_distribution<std::int64_t> gap(60, 86400);
  std::uniform_int_distribution<std::int64_t> start(0, 30 * 86400);

  Eigen::VectorXd logits(config.items);
  std::vector<double> weights(config.items);
  std::vector<std::uint8_t> used(config.items);
  for (std::uint32_t u = 0; u < config.users; ++u) {
    std::uint32_t length = 0;
    if (config.fixed_length) {
      length = *config.fixed_length;
    } else {
      const double x = config.min_length * std::pow(1.0 - unit(rng), -1.0 / (config.exponent - 1.0));
      length = static_cast<std::uint32_t>(std::min<double>(std::floor(x), config.max_length));
      // A user who has seen every item leaves nothing to sample negatives from.
      if (config.items > 1) length = std::min(length, config.items - 1);
    }
    const Eigen::VectorXd base = config.sharpness * (items * users.row(u).transpose());
    std::fill(used.begin(), used.end(), 0);
    std::uint32_t distinct = 0;
    std::int64_t ts = 1'600'000'000 + start(rng);
    std::int64_t prev = -1;
    for (std::uint32_t t = 0; t < length; ++t) {
      std::uint32_t v = 0;
      const bool exhausted = distinct >= config.items;
      if (unit(rng) < config.noise) {
        v = any_item(rng);
      } else {
        logits = base;
        if (prev >= 0) logits += config.sharpness * config.transition * (items * items.row(prev).transpose());
        const double top = logits.maxCoeff();
        for (std::uint32_t i = 0; i < config.items; ++i)
          weights[i] = (used[i] && !exhausted) ? 0.0 : std::exp(logits[i] - top);
        std::discrete_distribution<std::uint32_t> choose(weights.begin(), weights.end());
        v = choose(rng);
      }
      if (!used[v]) {
        used[v] = 1;
        ++distinct;
      }
      ts += gap(rng);
      out << 'u' << u << ",i" << v << ',' << ts;
      for (std::size_t f = 0; f < config.user_fields.size(); ++f)
        out << ',' << config.user_fields[f].name << user_attrs[u][f];
      for (std::size_t f = 0; f < config.item_fields.size(); ++f)
        out << ',' << config.item_fields[f].name << item_attrs[v][f];
      out << ",a" << action(rng) << '\n';
      ++log.rows;
      prev = v;
    }
  }
  log.csv = out.str();
  return log;
}

void write_synth(const SynthLog& log, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "log.csv") << log.csv;
  std::ofstream(dir / "schema.json") << log.schema.to_json().dump(2) << '\n';
}

}  // namespace dgenn
