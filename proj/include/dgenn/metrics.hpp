#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dgenn/data.hpp"

namespace dgenn::metrics {

/// Rank-based AUC with midranks for ties. Throws "AUC undefined" when only
/// one class is present.
double auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

double logloss(std::span<const double> predictions, std::span<const std::uint8_t> labels);

struct Bucket {
  std::uint64_t lo = 0;
  std::optional<std::uint64_t> hi;  // half-open [lo, hi); none = unbounded

  std::string key() const;
  bool contains(std::uint64_t x) const { return x >= lo && (!hi || x < *hi); }
};

/// [0, b0), [b0, b1), ..., [bk, inf).
std::vector<Bucket> buckets_from(std::span<const std::uint64_t> boundaries);

struct EvalReport;

struct Slice {
  Bucket bucket;
  std::vector<std::size_t> members;  // indices into the evaluated instances
  std::shared_ptr<EvalReport> report;
};

struct EvalReport {
  std::uint64_t n_pos = 0;
  std::uint64_t n_neg = 0;
  std::optional<double> auc;      // none when a class is missing
  std::optional<double> logloss;  // none when empty
  std::string slice_kind;         // "", "feature_frequency" or "behavior_length"
  std::vector<Slice> slices;

  std::uint64_t count() const { return n_pos + n_neg; }
  nlohmann::json to_json() const;
};

EvalReport evaluate(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Rarest non-behavior feature of an instance under the training counts.
std::uint64_t min_feature_frequency(const Instance& instance, std::span<const std::uint64_t> frequency);

/// Each instance goes to the bucket of its rarest feature, so slice counts
/// add up to the parent count.
EvalReport slice_by_feature_frequency(std::span<const Instance> instances, std::span<const double> scores,
                                      const FeatureVocabulary& vocab,
                                      std::span<const std::uint64_t> boundaries);

/// Buckets keyed by the length of the instance's behavior sequence.
EvalReport slice_by_behavior_length(std::span<const Instance> instances, std::span<const double> scores,
                                    std::span<const std::uint64_t> boundaries);

/// One row per bucket: kind, bucket, count, n_pos, n_neg, auc, logloss.
std::string slices_tsv(const EvalReport& report, const std::string& model = "");

}  // namespace dgenn::metrics
