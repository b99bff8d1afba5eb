#include "dgenn/aggregators.hpp"

#include <string>

namespace dgenn {

std::string_view to_string(AggregatorKind k) {
  switch (k) {
    case AggregatorKind::GCN: return "gcn";
    case AggregatorKind::NGCF: return "ngcf";
    case AggregatorKind::LightGCN: return "lightgcn";
  }
  return "?";
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::ReLU: return "relu";
    case Activation::LeakyReLU: return "leaky_relu";
  }
  return "?";
}

std::string_view to_string(PoolMode m) { return m == PoolMode::Sum ? "sum" : "mean"; }

AggregatorKind aggregator_from(std::string_view s) {
  for (auto k : {AggregatorKind::GCN, AggregatorKind::NGCF, AggregatorKind::LightGCN})
    if (to_string(k) == s) return k;
  throw ConfigError("aggregator: unknown kind '" + std::string(s) + "' (gcn, ngcf, lightgcn)");
}

Activation activation_from(std::string_view s) {
  for (auto a : {Activation::Identity, Activation::ReLU, Activation::LeakyReLU})
    if (to_string(a) == s) return a;
  throw ConfigError("activation: unknown '" + std::string(s) + "' (identity, relu, leaky_relu)");
}

PoolMode pool_mode_from(std::string_view s) {
  if (s == "sum") return PoolMode::Sum;
  if (s == "mean") return PoolMode::Mean;
  throw ConfigError("pool: unknown mode '" + std::string(s) + "' (sum, mean)");
}

}  // namespace dgenn
