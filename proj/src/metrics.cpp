#include "dgenn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace dgenn::metrics {

double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw NumericError("auc: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::uint64_t pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) {
        rank_sum += midrank;
        ++pos;
      }
    i = j;
  }
  const std::uint64_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw NumericError("AUC undefined: need both positive and negative labels");
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

double logloss(std::span<const double> predictions, std::span<const std::uint8_t> labels) {
  if (predictions.empty()) throw NumericError("logloss: empty batch");
  if (predictions.size() != labels.size()) throw NumericError("logloss: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    acc += labels[i] ? std::log(predictions[i]) : std::log(1.0 - predictions[i]);
  return -acc / static_cast<double>(predictions.size());
}

std::string Bucket::key() const {
  return "[" + std::to_string(lo) + "," + (hi ? std::to_string(*hi) + ")" : std::string("inf)"));
}

std::vector<Bucket> buckets_from(std::span<const std::uint64_t> boundaries) {
  std::vector<Bucket> out;
  std::uint64_t lo = 0;
  for (auto b : boundaries) {
    if (b < lo || (b == lo && !out.empty())) throw ConfigError("buckets: boundaries must increase");
    if (b > lo) out.push_back({lo, b});
    lo = b;
  }
  out.push_back({lo, std::nullopt});
  return out;
}

EvalReport evaluate(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw NumericError("evaluate: size mismatch");
  EvalReport r;
  for (auto l : labels) (l ? r.n_pos : r.n_neg)++;
  if (!scores.empty()) r.logloss = logloss(scores, labels);
  if (r.n_pos > 0 && r.n_neg > 0) r.auc = auc(scores, labels);
  return r;
}

std::uint64_t min_feature_frequency(const Instance& instance, std::span<const std::uint64_t> frequency) {
  std::uint64_t m = std::numeric_limits<std::uint64_t>::max();
  auto see = [&](FeatureId id) { m = std::min(m, id < frequency.size() ? frequency[id] : 0); };
  see(instance.user);
  see(instance.item);
  for (auto id : instance.user_attrs) see(id);
  for (auto id : instance.item_attrs) see(id);
  for (auto id : instance.context) see(id);
  return m;
}

namespace {

template <typename KeyFn>
EvalReport slice(std::span<const Instance> instances, std::span<const double> scores,
                 std::span<const std::uint64_t> boundaries, const std::string& kind, KeyFn key) {
  if (instances.size() != scores.size()) throw NumericError("slice: size mismatch");
  std::vector<std::uint8_t> labels;
  labels.reserve(instances.size());
  for (const auto& inst : instances) labels.push_back(inst.label);
  EvalReport parent = evaluate(scores, labels);
  parent.slice_kind = kind;
  for (const auto& bucket : buckets_from(boundaries)) {
    Slice s;
    s.bucket = bucket;
    std::vector<double> sub_scores;
    std::vector<std::uint8_t> sub_labels;
    for (std::size_t i = 0; i < instances.size(); ++i)
      if (bucket.contains(key(instances[i]))) {
        s.members.push_back(i);
        sub_scores.push_back(scores[i]);
        sub_labels.push_back(labels[i]);
      }
    s.report = std::make_shared<EvalReport>(evaluate(sub_scores, sub_labels));
    parent.slices.push_back(std::move(s));
  }
  return parent;
}

}  // namespace

EvalReport slice_by_feature_frequency(std::span<const Instance> instances, std::span<const double> scores,
                                      const FeatureVocabulary& vocab,
                                      std::span<const std::uint64_t> boundaries) {
  if (vocab.frequency.size() != vocab.total())
    throw DataError("slice_by_feature_frequency: vocabulary has no training frequencies");
  return slice(instances, scores, boundaries, "feature_frequency",
               [&](const Instance& x) { return min_feature_frequency(x, vocab.frequency); });
}

EvalReport slice_by_behavior_length(std::span<const Instance> instances, std::span<const double> scores,
                                    std::span<const std::uint64_t> boundaries) {
  return slice(instances, scores, boundaries, "behavior_length",
               [](const Instance& x) { return static_cast<std::uint64_t>(x.behaviors.size()); });
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j{{"n_pos", n_pos}, {"n_neg", n_neg}, {"count", count()}};
  j["auc"] = auc ? nlohmann::json(*auc) : nlohmann::json(nullptr);
  j["logloss"] = logloss ? nlohmann::json(*logloss) : nlohmann::json(nullptr);
  if (!slice_kind.empty()) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : slices) {
      auto sj = s.report->to_json();
      sj["bucket"] = s.bucket.key();
      arr.push_back(std::move(sj));
    }
    j["slices"] = {{"kind", slice_kind}, {"buckets", std::move(arr)}};
  }
  return j;
}

std::string slices_tsv(const EvalReport& report, const std::string& model) {
  std::ostringstream out;
  out.precision(10);
  auto opt = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("NA"); };
  for (const auto& s : report.slices)
    out << model << '\t' << report.slice_kind << '\t' << s.bucket.key() << '\t' << s.report->count() << '\t'
        << s.report->n_pos << '\t' << s.report->n_neg << '\t' << opt(s.report->auc) << '\t'
        << opt(s.report->logloss) << '\n';
  return out.str();
}

}  // namespace dgenn::metrics
