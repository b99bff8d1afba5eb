#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "dgenn/types.hpp"

namespace dgenn {

enum class FieldRole { User, Item, UserAttr, ItemAttr, Context, Timestamp };
enum class ColumnType { Id, Categorical, Timestamp };

std::string_view to_string(FieldRole role);
std::string_view to_string(ColumnType type);

/// One column of the interaction log and how it maps to a feature field.
struct FieldSpec {
  std::string name;
  std::string column;
  ColumnType type = ColumnType::Categorical;
  FieldRole role = FieldRole::Context;
  // Context fields of timestamp type are bucketed by this width.
  std::int64_t bucket_seconds = 3600;
  // Nonzero: tokens are hashed into this many buckets before indexing.
  std::uint32_t hash_buckets = 0;
};

struct Schema {
  std::vector<FieldSpec> fields;
  char delimiter = ',';
  char multi_value_separator = '|';

  static Schema from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct FieldInfo {
  std::string name;
  FieldRole role = FieldRole::Context;
  FeatureId offset = 0;
  FeatureId cardinality = 0;
  std::vector<std::string> tokens;  // local index -> raw token
};

/// Global feature index space. Fields are laid out contiguously in the order
/// user id, item id, user attribute fields, item attribute fields, context
/// fields, so user ids occupy [0, M) and item ids occupy [M, M+N).
class FeatureVocabulary {
 public:
  FeatureVocabulary() = default;
  explicit FeatureVocabulary(std::vector<FieldInfo> fields);

  const std::vector<FieldInfo>& fields() const { return fields_; }
  const FieldInfo& field(std::size_t f) const { return fields_.at(f); }
  std::size_t num_fields() const { return fields_.size(); }

  FeatureId total() const { return total_; }
  FeatureId num_users() const { return fields_.at(0).cardinality; }
  FeatureId num_items() const { return fields_.at(1).cardinality; }
  FeatureId item_offset() const { return fields_.at(1).offset; }

  std::optional<FeatureId> find(std::size_t field, std::string_view token) const;
  FeatureId index_of(std::size_t field, std::string_view token) const;
  std::size_t field_of(FeatureId index) const;
  std::vector<std::size_t> fields_with_role(FieldRole role) const;

  // Occurrence counts over the training split; empty until filled.
  std::vector<std::uint64_t> frequency;

  nlohmann::json to_json() const;
  static FeatureVocabulary from_json(const nlohmann::json& j);

 private:
  void rebuild_lookup();

  std::vector<FieldInfo> fields_;
  std::vector<std::unordered_map<std::string, FeatureId>> lookup_;
  FeatureId total_ = 0;
};

struct Instance {
  FeatureId user = 0;
  FeatureId item = 0;
  std::vector<FeatureId> user_attrs;
  std::vector<FeatureId> item_attrs;
  std::vector<FeatureId> behaviors;  // item feature ids, oldest first
  std::vector<FeatureId> context;
  std::uint8_t label = 0;

  bool operator==(const Instance&) const = default;
};

/// Binary user x item matrix in CSR form; columns are item-local indices.
struct InteractionMatrix {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint64_t> offsets{0};
  std::vector<std::uint32_t> columns;

  std::span<const std::uint32_t> row(std::uint32_t u) const {
    return {columns.data() + offsets[u], columns.data() + offsets[u + 1]};
  }
  std::uint64_t nnz() const { return columns.size(); }
  bool contains(std::uint32_t u, std::uint32_t v) const;

  /// Builds from per-row item lists (duplicates removed, columns sorted).
  static InteractionMatrix from_rows(std::uint32_t cols,
                                     std::vector<std::vector<std::uint32_t>> rows);
  bool operator==(const InteractionMatrix&) const = default;
};

struct Event {
  FeatureId item = 0;
  std::int64_t timestamp = 0;
  std::vector<FeatureId> context;
};

struct ParseStats {
  std::uint64_t rows = 0;
  std::uint64_t rejected = 0;
  std::uint64_t duplicates = 0;
  std::vector<std::string> messages;  // first few rejection reasons
};

/// Parsed but unsplit log.
struct RawDataset {
  FeatureVocabulary vocabulary;
  std::vector<std::vector<Event>> sequences;         // per user, time-sorted
  std::vector<std::vector<FeatureId>> user_attributes;  // per user, sorted
  std::vector<std::vector<FeatureId>> item_attributes;  // per item, sorted
  ParseStats stats;
};

struct SplitStats {
  std::uint64_t retained_users = 0;
  std::uint64_t dropped_users = 0;
  std::uint64_t negative_fallbacks = 0;
};

struct Dataset {
  FeatureVocabulary vocabulary;
  InteractionMatrix interactions;  // training window only
  std::vector<std::vector<FeatureId>> user_attributes;
  std::vector<std::vector<FeatureId>> item_attributes;
  // Item-local ids each user ever clicked (any window), sorted.
  std::vector<std::vector<std::uint32_t>> clicked;
  std::vector<Instance> train;
  std::vector<Instance> val;
  std::vector<Instance> test;
  SplitStats stats;
};

RawDataset parse_interactions(const std::filesystem::path& log_path, const Schema& schema);
RawDataset parse_interactions(std::istream& in, const Schema& schema);

/// Minimum behaviors a user needs for the three leave-last targets.
inline constexpr std::size_t kMinBehaviors = 4;

/// Positive instances only. Users with fewer than four behaviors are dropped.
Dataset split_leave_last(const RawDataset& raw);

struct NegativeSampling {
  std::uint32_t n_neg = 10;
  bool popularity_weighted = false;
  std::uint64_t seed = 0;
};

/// Expands each positive into itself followed by `n_neg` label-0 copies whose
/// target item the user never clicked.
std::vector<Instance> sample_negatives(const Dataset& dataset,
                                       std::span<const Instance> positives,
                                       const NegativeSampling& options,
                                       std::uint64_t* fallbacks = nullptr);

/// Counts non-behavior feature occurrences over `train`.
std::vector<std::uint64_t> count_frequency(const FeatureVocabulary& vocab,
                                           std::span<const Instance> train);

/// split -> negatives for every split -> training frequencies.
Dataset build_dataset(const RawDataset& raw, const NegativeSampling& options);

// Bundle directory: vocab.json, instances.{train,val,test}.bin, Y.bin.
void save_bundle(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_bundle(const std::filesystem::path& dir);

void write_instances(std::ostream& out, std::span<const Instance> instances);
std::vector<Instance> read_instances(std::istream& in);
void write_interactions(std::ostream& out, const InteractionMatrix& y);
InteractionMatrix read_interactions(std::istream& in);

}  // namespace dgenn
