#include <cmath>
#include <random>

#include "doctest.h"

#include "dgenn/metrics.hpp"
#include "dgenn/model.hpp"
#include "support.hpp"

using namespace dgenn;
namespace ts = testsupport;

namespace {

struct Scored {
  std::vector<double> s;
  std::vector<std::uint8_t> y;
};

Scored random_scored(std::size_t n, std::uint64_t seed, bool ties = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  std::uniform_int_distribution<int> coarse(1, 9);
  Scored r;
  for (std::size_t i = 0; i < n; ++i) {
    r.s.push_back(ties ? coarse(rng) / 10.0 : u(rng));
    r.y.push_back(static_cast<std::uint8_t>(rng() % 2));
  }
  r.y[0] = 1;
  r.y[1] = 0;
  return r;
}

// user(3) item(3) age(2) ctx(2)
FeatureVocabulary slice_vocab(std::vector<std::uint64_t> frequency) {
  std::vector<FieldInfo> f(4);
  f[0] = {"user", FieldRole::User, 0, 0, {"u0", "u1", "u2"}};
  f[1] = {"item", FieldRole::Item, 0, 0, {"i0", "i1", "i2"}};
  f[2] = {"age", FieldRole::UserAttr, 0, 0, {"a0", "a1"}};
  f[3] = {"ctx", FieldRole::Context, 0, 0, {"x0", "x1"}};
  FeatureVocabulary v(std::move(f));
  v.frequency = std::move(frequency);
  return v;
}

const std::vector<std::uint64_t> kFreqBounds{1, 10, 100};
const std::vector<std::uint64_t> kLenBounds{1, 5, 20};

}  // namespace

TEST_CASE("auc examples") {
  CHECK(metrics::auc(std::vector<double>{0.9, 0.1}, std::vector<std::uint8_t>{1, 0}) == 1.0);
  CHECK(metrics::auc(std::vector<double>{0.1, 0.9}, std::vector<std::uint8_t>{1, 0}) == 0.0);
  CHECK(metrics::auc(std::vector<double>(6, 0.3), std::vector<std::uint8_t>{1, 0, 1, 0, 0, 1}) == 0.5);
  try {
    metrics::auc(std::vector<double>{0.2, 0.4}, std::vector<std::uint8_t>{1, 1});
    FAIL("expected an error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("AUC undefined") != std::string::npos);
  }
  CHECK_THROWS_AS(metrics::auc(std::vector<double>{0.2}, std::vector<std::uint8_t>{0}), NumericError);
}

TEST_CASE("auc equals the pairwise definition") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed)
    for (bool ties : {false, true}) {
      const auto r = random_scored(200, seed, ties);
      CHECK(std::abs(metrics::auc(r.s, r.y) - ts::pairwise_auc(r.s, r.y)) < 1e-12);
    }
}

TEST_CASE("auc properties") {
  const auto r = random_scored(150, 9);
  const double base = metrics::auc(r.s, r.y);
  CHECK(base >= 0.0);
  CHECK(base <= 1.0);
  std::vector<double> t;
  for (double s : r.s) t.push_back(std::exp(3.0 * s) - 7.0);
  CHECK(metrics::auc(t, r.y) == doctest::Approx(base).epsilon(1e-15));
  std::vector<std::uint8_t> flipped;
  for (auto y : r.y) flipped.push_back(1 - y);
  CHECK(base + metrics::auc(r.s, flipped) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("logloss agrees with the training loss") {
  const auto r = random_scored(100, 3);
  CHECK(std::abs(metrics::logloss(r.s, r.y) - logloss<double, std::uint8_t>(r.s, r.y)) < 1e-12);
  const std::vector<double> half(10, 0.5);
  CHECK(std::abs(metrics::logloss(half, std::span(r.y).first(10)) - std::log(2.0)) < 1e-12);
  CHECK_THROWS_AS(metrics::logloss({}, {}), NumericError);
}

TEST_CASE("evaluate reports counts and leaves undefined metrics empty") {
  const auto r = metrics::evaluate(std::vector<double>{0.7, 0.2, 0.9}, std::vector<std::uint8_t>{1, 0, 1});
  CHECK(r.n_pos == 2);
  CHECK(r.n_neg == 1);
  CHECK(*r.auc == 1.0);
  const auto one = metrics::evaluate(std::vector<double>{0.7}, std::vector<std::uint8_t>{1});
  CHECK_FALSE(one.auc.has_value());
  CHECK(one.logloss.has_value());
  const auto none = metrics::evaluate({}, {});
  CHECK_FALSE(none.logloss.has_value());
  CHECK(none.to_json()["auc"].is_null());
}

TEST_CASE("buckets are half open with an underflow bucket") {
  const auto b = metrics::buckets_from(kFreqBounds);
  REQUIRE(b.size() == 4);
  CHECK(b[0].key() == "[0,1)");
  CHECK(b[1].key() == "[1,10)");
  CHECK(b[3].key() == "[100,inf)");
  CHECK(b[1].contains(9));
  CHECK_FALSE(b[1].contains(10));
  CHECK(b[3].contains(1u << 30));
  const std::vector<std::uint64_t> bad{5, 3};
  CHECK_THROWS_AS(metrics::buckets_from(bad), ConfigError);
}

TEST_CASE("feature frequency slices: examples") {
  // frequencies per feature id: users 0..2, items 3..5, age 6..7, ctx 8..9
  const auto vocab = slice_vocab({500, 200, 150, 5, 300, 120, 1000, 900, 400, 40});
  Instance rare{0, 3, {6}, {}, {}, {8}, 1};
  auto r = metrics::slice_by_feature_frequency(std::span(&rare, 1), std::vector<double>{0.8}, vocab, kFreqBounds);
  REQUIRE(r.slices.size() == 4);
  CHECK(r.slices[1].bucket.key() == "[1,10)");
  CHECK(r.slices[1].members == std::vector<std::size_t>{0});
  CHECK(r.slices[0].report->count() == 0);
  CHECK(r.slices[2].report->count() == 0);
  CHECK(r.slices[3].report->count() == 0);

  Instance common{1, 4, {7}, {}, {3}, {8}, 0};  // behaviors do not count
  r = metrics::slice_by_feature_frequency(std::span(&common, 1), std::vector<double>{0.3}, vocab, kFreqBounds);
  CHECK(r.slices[3].members == std::vector<std::size_t>{0});
  for (int b = 0; b < 3; ++b) CHECK(r.slices[b].members.empty());
  CHECK(r.slice_kind == "feature_frequency");

  auto no_freq = vocab;
  no_freq.frequency.clear();
  CHECK_THROWS_AS(metrics::slice_by_feature_frequency(std::span(&common, 1), std::vector<double>{0.3}, no_freq,
                                                      kFreqBounds),
                  DataError);
}

TEST_CASE("feature frequency slices match a per-instance scan") {
  std::mt19937_64 rng(21);
  std::vector<std::uint64_t> freq(10);
  for (auto& f : freq) f = rng() % 300;
  const auto vocab = slice_vocab(freq);
  std::vector<Instance> xs;
  std::vector<double> scores;
  for (int i = 0; i < 50; ++i) {
    Instance x;
    x.user = static_cast<FeatureId>(rng() % 3);
    x.item = static_cast<FeatureId>(3 + rng() % 3);
    if (rng() % 2) x.user_attrs = {static_cast<FeatureId>(6 + rng() % 2)};
    if (rng() % 2) x.context = {static_cast<FeatureId>(8 + rng() % 2)};
    x.behaviors = {static_cast<FeatureId>(3 + rng() % 3)};
    x.label = static_cast<std::uint8_t>(rng() % 2);
    xs.push_back(x);
    scores.push_back(std::uniform_real_distribution<double>(0.05, 0.95)(rng));
  }
  const auto r = metrics::slice_by_feature_frequency(xs, scores, vocab, kFreqBounds);
  const std::uint64_t lo[] = {0, 1, 10, 100};
  const std::uint64_t hi[] = {1, 10, 100, ~0ull};
  std::size_t total = 0;
  for (std::size_t b = 0; b < 4; ++b) {
    std::vector<std::size_t> expected;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      std::vector<std::uint64_t> fs{freq[xs[i].user], freq[xs[i].item]};
      for (auto a : xs[i].user_attrs) fs.push_back(freq[a]);
      for (auto a : xs[i].context) fs.push_back(freq[a]);
      const auto m = *std::min_element(fs.begin(), fs.end());
      if (m >= lo[b] && m < hi[b]) expected.push_back(i);
    }
    CHECK(r.slices[b].members == expected);
    total += r.slices[b].report->count();
    if (r.slices[b].report->auc) {
      std::vector<double> s;
      std::vector<std::uint8_t> y;
      for (auto i : expected) {
        s.push_back(scores[i]);
        y.push_back(xs[i].label);
      }
      CHECK(*r.slices[b].report->auc == doctest::Approx(ts::pairwise_auc(s, y)).epsilon(1e-12));
    }
  }
  CHECK(total == r.count());
}

TEST_CASE("behavior length slices") {
  std::vector<Instance> xs(2);
  xs[0].behaviors.assign(3, 1);
  xs[0].label = 1;
  xs[1].behaviors.assign(20, 1);
  const auto r = metrics::slice_by_behavior_length(xs, std::vector<double>{0.6, 0.4}, kLenBounds);
  REQUIRE(r.slices.size() == 4);
  CHECK(r.slices[1].bucket.key() == "[1,5)");
  CHECK(r.slices[1].members == std::vector<std::size_t>{0});
  CHECK(r.slices[3].bucket.key() == "[20,inf)");
  CHECK(r.slices[3].members == std::vector<std::size_t>{1});
  CHECK(r.slices[2].members.empty());

  std::mt19937_64 rng(8);
  std::vector<Instance> many(300);
  std::vector<double> scores;
  std::size_t counts[4] = {0, 0, 0, 0};
  for (auto& x : many) {
    const auto len = rng() % 40;
    x.behaviors.assign(len, 2);
    x.label = static_cast<std::uint8_t>(rng() % 2);
    scores.push_back(0.5);
    counts[len == 0 ? 0 : len < 5 ? 1 : len < 20 ? 2 : 3]++;
  }
  const auto s = metrics::slice_by_behavior_length(many, scores, kLenBounds);
  std::size_t sum = 0;
  for (int b = 0; b < 4; ++b) {
    CHECK(s.slices[b].report->count() == counts[b]);
    sum += s.slices[b].report->count();
  }
  CHECK(sum == s.count());
}

TEST_CASE("slice report serialization") {
  std::vector<Instance> xs(3);
  xs[0].behaviors.assign(2, 1);
  xs[0].label = 1;
  xs[1].behaviors.assign(2, 1);
  xs[2].behaviors.assign(7, 1);
  const auto r = metrics::slice_by_behavior_length(xs, std::vector<double>{0.6, 0.4, 0.5}, kLenBounds);
  const auto tsv = metrics::slices_tsv(r, "dg");
  std::istringstream in(tsv);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 4);
  CHECK(lines[1].rfind("dg\tbehavior_length\t[1,5)\t2\t1\t1\t1", 0) == 0);
  CHECK(lines[2].find("\tNA\t") != std::string::npos);
  const auto j = r.to_json();
  CHECK(j["slices"]["kind"] == "behavior_length");
  CHECK(j["slices"]["buckets"].size() == 4);
  CHECK(j["slices"]["buckets"][1]["bucket"] == "[1,5)");
  CHECK(j["count"] == 3);
}
