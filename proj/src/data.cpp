#include "dgenn/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "dgenn/binary_io.hpp"

namespace dgenn {

namespace {

constexpr std::size_t kMaxMessages = 16;

const std::pair<FieldRole, std::string_view> kRoleNames[] = {
    {FieldRole::User, "user"},         {FieldRole::Item, "item"},
    {FieldRole::UserAttr, "user_attr"}, {FieldRole::ItemAttr, "item_attr"},
    {FieldRole::Context, "context"},   {FieldRole::Timestamp, "timestamp"},
};

const std::pair<ColumnType, std::string_view> kTypeNames[] = {
    {ColumnType::Id, "id"},
    {ColumnType::Categorical, "categorical"},
    {ColumnType::Timestamp, "timestamp"},
};

FieldRole role_from(std::string_view s) {
  for (const auto& [role, name] : kRoleNames)
    if (name == s) return role;
  throw ConfigError("unknown field role '" + std::string(s) + "'");
}

ColumnType type_from(std::string_view s) {
  for (const auto& [type, name] : kTypeNames)
    if (name == s) return type;
  throw ConfigError("unknown column type '" + std::string(s) + "'");
}

std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::optional<std::int64_t> parse_int(std::string_view s) {
  std::int64_t v = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end || s.empty()) return std::nullopt;
  return v;
}

// Numeric tokens sort numerically, everything else lexicographically after them.
bool natural_less(const std::string& a, const std::string& b) {
  const auto ia = parse_int(a);
  const auto ib = parse_int(b);
  if (ia && ib) return *ia != *ib ? *ia < *ib : a < b;
  if (ia != std::nullopt) return true;
  if (ib != std::nullopt) return false;
  return a < b;
}

std::uint64_t split_seed(std::uint64_t seed, std::uint64_t split) {
  return seed + 0x9E3779B97F4A7C15ull * (split + 1);
}

// Raw tokens of one accepted row, indexed by schema position.
struct RowTokens {
  std::string user;
  std::string item;
  std::int64_t timestamp = 0;
  std::vector<std::vector<std::string>> values;
};

}  // namespace

std::string_view to_string(FieldRole role) {
  for (const auto& [r, name] : kRoleNames)
    if (r == role) return name;
  return "?";
}

std::string_view to_string(ColumnType type) {
  for (const auto& [t, name] : kTypeNames)
    if (t == type) return name;
  return "?";
}

Schema Schema::from_json(const nlohmann::json& j) {
  Schema schema;
  if (!j.is_object()) throw ConfigError("schema: expected an object");
  for (const auto& [key, value] : j.items()) {
    if (key != "fields" && key != "delimiter" && key != "multi_value_separator")
      throw ConfigError("schema: unknown key '" + key + "'");
  }
  if (j.contains("delimiter")) {
    const auto d = j.at("delimiter").get<std::string>();
    if (d.size() != 1) throw ConfigError("schema.delimiter: must be one character");
    schema.delimiter = d[0];
  }
  if (j.contains("multi_value_separator")) {
    const auto d = j.at("multi_value_separator").get<std::string>();
    if (d.size() != 1) throw ConfigError("schema.multi_value_separator: must be one character");
    schema.multi_value_separator = d[0];
  }
  if (!j.contains("fields") || !j.at("fields").is_array())
    throw ConfigError("schema.fields: required array");
  for (const auto& f : j.at("fields")) {
    FieldSpec spec;
    for (const auto& [key, value] : f.items()) {
      if (key != "name" && key != "column" && key != "type" && key != "role" &&
          key != "bucket_seconds" && key != "hash_buckets")
        throw ConfigError("schema.fields: unknown key '" + key + "'");
    }
    if (!f.contains("name")) throw ConfigError("schema.fields: 'name' is required");
    spec.name = f.at("name").get<std::string>();
    spec.column = f.value("column", spec.name);
    spec.type = type_from(f.value("type", std::string("categorical")));
    spec.role = role_from(f.value("role", std::string("context")));
    spec.bucket_seconds = f.value("bucket_seconds", spec.bucket_seconds);
    spec.hash_buckets = f.value("hash_buckets", spec.hash_buckets);
    if (spec.bucket_seconds <= 0)
      throw ConfigError("schema.fields." + spec.name + ".bucket_seconds: must be > 0");
    schema.fields.push_back(std::move(spec));
  }
  auto count = [&](FieldRole r) {
    return std::count_if(schema.fields.begin(), schema.fields.end(),
                         [r](const FieldSpec& s) { return s.role == r; });
  };
  if (count(FieldRole::User) != 1 || count(FieldRole::Item) != 1 ||
      count(FieldRole::Timestamp) != 1)
    throw ConfigError("schema.fields: need exactly one user, item and timestamp field");
  return schema;
}

nlohmann::json Schema::to_json() const {
  nlohmann::json fields_json = nlohmann::json::array();
  for (const auto& f : fields) {
    nlohmann::json e{{"name", f.name},
                     {"column", f.column},
                     {"type", to_string(f.type)},
                     {"role", to_string(f.role)}};
    if (f.role == FieldRole::Context && f.type == ColumnType::Timestamp)
      e["bucket_seconds"] = f.bucket_seconds;
    if (f.hash_buckets != 0) e["hash_buckets"] = f.hash_buckets;
    fields_json.push_back(std::move(e));
  }
  return {{"fields", fields_json},
          {"delimiter", std::string(1, delimiter)},
          {"multi_value_separator", std::string(1, multi_value_separator)}};
}

// ---------------------------------------------------------------------------
// FeatureVocabulary

FeatureVocabulary::FeatureVocabulary(std::vector<FieldInfo> fields) : fields_(std::move(fields)) {
  FeatureId offset = 0;
  for (auto& f : fields_) {
    f.offset = offset;
    f.cardinality = static_cast<FeatureId>(f.tokens.size());
    offset += f.cardinality;
  }
  total_ = offset;
  rebuild_lookup();
}

void FeatureVocabulary::rebuild_lookup() {
  lookup_.assign(fields_.size(), {});
  for (std::size_t f = 0; f < fields_.size(); ++f) {
    for (FeatureId i = 0; i < fields_[f].tokens.size(); ++i)
      lookup_[f].emplace(fields_[f].tokens[i], fields_[f].offset + i);
  }
}

std::optional<FeatureId> FeatureVocabulary::find(std::size_t field, std::string_view token) const {
  const auto& m = lookup_.at(field);
  const auto it = m.find(std::string(token));
  if (it == m.end()) return std::nullopt;
  return it->second;
}

FeatureId FeatureVocabulary::index_of(std::size_t field, std::string_view token) const {
  if (auto idx = find(field, token)) return *idx;
  throw DataError("token '" + std::string(token) + "' not in field " + fields_.at(field).name);
}

std::size_t FeatureVocabulary::field_of(FeatureId index) const {
  if (index >= total_) throw DataError("feature index out of range");
  const auto it = std::upper_bound(fields_.begin(), fields_.end(), index,
                                   [](FeatureId i, const FieldInfo& f) { return i < f.offset; });
  auto f = static_cast<std::size_t>(std::distance(fields_.begin(), it)) - 1;
  // Skip empty fields sharing the same offset.
  while (fields_[f].cardinality == 0) --f;
  return f;
}

std::vector<std::size_t> FeatureVocabulary::fields_with_role(FieldRole role) const {
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f < fields_.size(); ++f)
    if (fields_[f].role == role) out.push_back(f);
  return out;
}

nlohmann::json FeatureVocabulary::to_json() const {
  nlohmann::json fs = nlohmann::json::array();
  for (const auto& f : fields_) {
    fs.push_back({{"name", f.name},
                  {"role", to_string(f.role)},
                  {"offset", f.offset},
                  {"cardinality", f.cardinality},
                  {"tokens", f.tokens}});
  }
  return {{"fields", fs}, {"total", total_}, {"frequency", frequency}};
}

FeatureVocabulary FeatureVocabulary::from_json(const nlohmann::json& j) {
  std::vector<FieldInfo> fields;
  for (const auto& f : j.at("fields")) {
    FieldInfo info;
    info.name = f.at("name").get<std::string>();
    info.role = role_from(f.at("role").get<std::string>());
    info.tokens = f.at("tokens").get<std::vector<std::string>>();
    fields.push_back(std::move(info));
  }
  FeatureVocabulary v(std::move(fields));
  v.frequency = j.value("frequency", std::vector<std::uint64_t>{});
  return v;
}

// ---------------------------------------------------------------------------
// InteractionMatrix

bool InteractionMatrix::contains(std::uint32_t u, std::uint32_t v) const {
  const auto r = row(u);
  return std::binary_search(r.begin(), r.end(), v);
}

InteractionMatrix InteractionMatrix::from_rows(std::uint32_t cols,
                                               std::vector<std::vector<std::uint32_t>> rows) {
  InteractionMatrix y;
  y.rows = static_cast<std::uint32_t>(rows.size());
  y.cols = cols;
  y.offsets.assign(1, 0);
  for (auto& r : rows) {
    std::sort(r.begin(), r.end());
    r.erase(std::unique(r.begin(), r.end()), r.end());
    y.columns.insert(y.columns.end(), r.begin(), r.end());
    y.offsets.push_back(y.columns.size());
  }
  return y;
}

// ---------------------------------------------------------------------------
// Parsing

RawDataset parse_interactions(const std::filesystem::path& log_path, const Schema& schema) {
  std::ifstream in(log_path);
  if (!in) throw MissingArtifact("cannot read interaction log " + log_path.string());
  return parse_interactions(in, schema);
}

RawDataset parse_interactions(std::istream& in, const Schema& schema) {
  RawDataset raw;
  std::string line;
  if (!std::getline(in, line)) throw DataError("no usable rows: empty log");

  const auto header = split(line, schema.delimiter);
  auto column_of = [&](const std::string& name) {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (trim(header[c]) == name) return c;
    throw DataError("log header lacks column '" + name + "'");
  };

  std::size_t user_col = 0, item_col = 0, ts_col = 0;
  std::vector<std::size_t> value_fields;  // schema positions of attr/context fields
  std::vector<std::size_t> value_cols;
  for (std::size_t s = 0; s < schema.fields.size(); ++s) {
    const auto& f = schema.fields[s];
    const auto col = column_of(f.column);
    switch (f.role) {
      case FieldRole::User: user_col = col; break;
      case FieldRole::Item: item_col = col; break;
      case FieldRole::Timestamp: ts_col = col; break;
      default:
        value_fields.push_back(s);
        value_cols.push_back(col);
    }
  }

  auto reject = [&](std::uint64_t lineno, const std::string& why) {
    ++raw.stats.rejected;
    if (raw.stats.messages.size() < kMaxMessages)
      raw.stats.messages.push_back("line " + std::to_string(lineno) + ": " + why);
  };

  std::vector<RowTokens> rows;
  std::uint64_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    ++raw.stats.rows;
    const auto cells = split(line, schema.delimiter);
    if (cells.size() != header.size()) {
      reject(lineno, "expected " + std::to_string(header.size()) + " columns");
      continue;
    }
    RowTokens row;
    row.user = std::string(trim(cells[user_col]));
    row.item = std::string(trim(cells[item_col]));
    const auto ts = parse_int(trim(cells[ts_col]));
    if (row.user.empty() || row.item.empty() || !ts) {
      reject(lineno, "missing user, item or timestamp");
      continue;
    }
    row.timestamp = *ts;
    row.values.resize(value_fields.size());
    bool ok = true;
    for (std::size_t k = 0; k < value_fields.size() && ok; ++k) {
      const auto& spec = schema.fields[value_fields[k]];
      const auto cell = trim(cells[value_cols[k]]);
      if (spec.type == ColumnType::Timestamp) {
        const auto v = parse_int(cell);
        if (!v) {
          ok = false;
          break;
        }
        // floor division so negative timestamps bucket consistently
        auto b = *v / spec.bucket_seconds;
        if (*v % spec.bucket_seconds != 0 && *v < 0) --b;
        row.values[k].push_back(std::to_string(b));
      } else {
        for (auto tok : split(cell, schema.multi_value_separator)) {
          tok = trim(tok);
          if (!tok.empty()) row.values[k].emplace_back(tok);
        }
      }
      if (spec.hash_buckets != 0) {
        for (auto& tok : row.values[k]) tok = std::to_string(io::fnv1a(tok) % spec.hash_buckets);
      }
    }
    if (!ok) {
      reject(lineno, "unparseable timestamp feature");
      continue;
    }
    rows.push_back(std::move(row));
  }

  if (rows.empty()) throw DataError("no usable rows");
  if (raw.stats.rejected * 2 > raw.stats.rows)
    throw DataError("more than half of the rows were rejected (" +
                    std::to_string(raw.stats.rejected) + "/" + std::to_string(raw.stats.rows) + ")");

  // Vocabulary: user, item, user attrs, item attrs, context, each sorted.
  std::vector<std::size_t> order;  // value-field slots in vocabulary order
  for (FieldRole role : {FieldRole::UserAttr, FieldRole::ItemAttr, FieldRole::Context})
    for (std::size_t k = 0; k < value_fields.size(); ++k)
      if (schema.fields[value_fields[k]].role == role) order.push_back(k);

  auto sorted_tokens = [](std::set<std::string> s) {
    std::vector<std::string> v(s.begin(), s.end());
    std::sort(v.begin(), v.end(), natural_less);
    return v;
  };
  std::set<std::string> users, items;
  std::vector<std::set<std::string>> values(value_fields.size());
  for (const auto& r : rows) {
    users.insert(r.user);
    items.insert(r.item);
    for (std::size_t k = 0; k < r.values.size(); ++k) values[k].insert(r.values[k].begin(), r.values[k].end());
  }
  std::vector<FieldInfo> infos;
  auto spec_of = [&](FieldRole role) -> const FieldSpec& {
    return *std::find_if(schema.fields.begin(), schema.fields.end(),
                         [role](const FieldSpec& s) { return s.role == role; });
  };
  infos.push_back({spec_of(FieldRole::User).name, FieldRole::User, 0, 0, sorted_tokens(users)});
  infos.push_back({spec_of(FieldRole::Item).name, FieldRole::Item, 0, 0, sorted_tokens(items)});
  for (auto k : order) {
    const auto& spec = schema.fields[value_fields[k]];
    infos.push_back({spec.name, spec.role, 0, 0, sorted_tokens(values[k])});
  }
  raw.vocabulary = FeatureVocabulary(std::move(infos));
  const auto& vocab = raw.vocabulary;
  const auto M = vocab.num_users();
  const auto N = vocab.num_items();

  std::vector<std::size_t> vocab_field(value_fields.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) vocab_field[order[pos]] = pos + 2;

  raw.sequences.assign(M, {});
  std::vector<std::set<FeatureId>> uattr(M), iattr(N);
  for (const auto& r : rows) {
    const auto u = vocab.index_of(0, r.user);
    const auto v = vocab.index_of(1, r.item);
    Event ev{v, r.timestamp, {}};
    for (std::size_t k = 0; k < r.values.size(); ++k) {
      const auto f = vocab_field[k];
      for (const auto& tok : r.values[k]) {
        const auto idx = vocab.index_of(f, tok);
        switch (vocab.field(f).role) {
          case FieldRole::UserAttr: uattr[u].insert(idx); break;
          case FieldRole::ItemAttr: iattr[v - vocab.item_offset()].insert(idx); break;
          default: ev.context.push_back(idx);
        }
      }
    }
    std::sort(ev.context.begin(), ev.context.end());
    ev.context.erase(std::unique(ev.context.begin(), ev.context.end()), ev.context.end());
    raw.sequences[u].push_back(std::move(ev));
  }

  for (auto& seq : raw.sequences) {
    std::sort(seq.begin(), seq.end(), [](const Event& a, const Event& b) {
      if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
      if (a.item != b.item) return a.item < b.item;
      return a.context < b.context;
    });
    const auto before = seq.size();
    seq.erase(std::unique(seq.begin(), seq.end(),
                          [](const Event& a, const Event& b) {
                            return a.timestamp == b.timestamp && a.item == b.item;
                          }),
              seq.end());
    raw.stats.duplicates += before - seq.size();
  }
  raw.user_attributes.reserve(M);
  for (auto& s : uattr) raw.user_attributes.emplace_back(s.begin(), s.end());
  raw.item_attributes.reserve(N);
  for (auto& s : iattr) raw.item_attributes.emplace_back(s.begin(), s.end());
  return raw;
}

// ---------------------------------------------------------------------------
// Split and negatives

Dataset split_leave_last(const RawDataset& raw) {
  Dataset ds;
  ds.vocabulary = raw.vocabulary;
  ds.user_attributes = raw.user_attributes;
  ds.item_attributes = raw.item_attributes;
  const auto M = raw.vocabulary.num_users();
  const auto N = raw.vocabulary.num_items();
  const auto item_offset = raw.vocabulary.item_offset();

  std::vector<std::vector<std::uint32_t>> y_rows(M);
  ds.clicked.assign(M, {});

  for (FeatureId u = 0; u < M; ++u) {
    const auto& seq = raw.sequences[u];
    const auto T = seq.size();
    for (const auto& ev : seq) ds.clicked[u].push_back(ev.item - item_offset);
    std::sort(ds.clicked[u].begin(), ds.clicked[u].end());
    ds.clicked[u].erase(std::unique(ds.clicked[u].begin(), ds.clicked[u].end()), ds.clicked[u].end());
    if (T < kMinBehaviors) {
      ++ds.stats.dropped_users;
      continue;
    }
    ++ds.stats.retained_users;

    auto make = [&](std::size_t target) {
      Instance x;
      x.user = u;
      x.item = seq[target].item;
      x.user_attrs = raw.user_attributes[u];
      x.item_attrs = raw.item_attributes[x.item - item_offset];
      for (std::size_t t = 0; t < target; ++t)
        if (seq[t].item != x.item) x.behaviors.push_back(seq[t].item);
      x.context = seq[target].context;
      x.label = 1;
      return x;
    };
    ds.train.push_back(make(T - 3));
    ds.val.push_back(make(T - 2));
    ds.test.push_back(make(T - 1));
    for (std::size_t t = 0; t + 3 < T; ++t) y_rows[u].push_back(seq[t].item - item_offset);
  }
  if (ds.stats.retained_users == 0)
    throw DataError("all users dropped: every user has fewer than 4 behaviors");
  ds.interactions = InteractionMatrix::from_rows(N, std::move(y_rows));
  return ds;
}

std::vector<Instance> sample_negatives(const Dataset& dataset, std::span<const Instance> positives,
                                       const NegativeSampling& options, std::uint64_t* fallbacks) {
  if (options.n_neg == 0) throw ConfigError("n_neg must be >= 1");
  const auto N = dataset.vocabulary.num_items();
  const auto item_offset = dataset.vocabulary.item_offset();
  std::mt19937_64 rng(options.seed);

  std::discrete_distribution<std::uint32_t> popularity;
  if (options.popularity_weighted) {
    std::vector<double> w(N, 1.0);
    for (auto v : dataset.interactions.columns) w[v] += 1.0;
    popularity = std::discrete_distribution<std::uint32_t>(w.begin(), w.end());
  }
  std::uniform_int_distribution<std::uint32_t> uniform(0, N - 1);

  std::vector<Instance> out;
  out.reserve(positives.size() * (options.n_neg + 1));
  std::vector<std::uint32_t> chosen;
  for (const auto& pos : positives) {
    out.push_back(pos);
    const auto& clicked = dataset.clicked.at(pos.user);
    const std::size_t candidates = N - clicked.size();
    if (candidates == 0) throw DataError("user clicked every item; no negatives possible");
    auto is_clicked = [&](std::uint32_t v) {
      return std::binary_search(clicked.begin(), clicked.end(), v);
    };
    chosen.clear();
    if (candidates >= options.n_neg) {
      while (chosen.size() < options.n_neg) {
        const auto v = options.popularity_weighted ? popularity(rng) : uniform(rng);
        if (is_clicked(v) || std::find(chosen.begin(), chosen.end(), v) != chosen.end()) continue;
        chosen.push_back(v);
      }
    } else {
      // Documented fallback: too few unclicked items, draw with replacement.
      if (fallbacks) ++*fallbacks;
      std::vector<std::uint32_t> pool;
      for (std::uint32_t v = 0; v < N; ++v)
        if (!is_clicked(v)) pool.push_back(v);
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      while (chosen.size() < options.n_neg) chosen.push_back(pool[pick(rng)]);
    }
    for (auto v : chosen) {
      Instance neg = pos;
      neg.item = item_offset + v;
      neg.item_attrs = dataset.item_attributes[v];
      neg.label = 0;
      out.push_back(std::move(neg));
    }
  }
  return out;
}

std::vector<std::uint64_t> count_frequency(const FeatureVocabulary& vocab,
                                           std::span<const Instance> train) {
  std::vector<std::uint64_t> freq(vocab.total(), 0);
  for (const auto& x : train) {
    ++freq[x.user];
    ++freq[x.item];
    for (auto a : x.user_attrs) ++freq[a];
    for (auto b : x.item_attrs) ++freq[b];
    for (auto c : x.context) ++freq[c];
  }
  return freq;
}

Dataset build_dataset(const RawDataset& raw, const NegativeSampling& options) {
  Dataset ds = split_leave_last(raw);
  std::uint64_t fallbacks = 0;
  std::vector<Instance>* splits[] = {&ds.train, &ds.val, &ds.test};
  for (std::uint64_t s = 0; s < 3; ++s) {
    auto opts = options;
    opts.seed = split_seed(options.seed, s);
    *splits[s] = sample_negatives(ds, *splits[s], opts, &fallbacks);
  }
  ds.stats.negative_fallbacks = fallbacks;
  ds.vocabulary.frequency = count_frequency(ds.vocabulary, ds.train);
  return ds;
}

// ---------------------------------------------------------------------------
// Bundle IO

void write_instances(std::ostream& out, std::span<const Instance> instances) {
  io::write_magic(out, "DGIS");
  io::write_pod<std::uint32_t>(out, 1);
  io::write_pod<std::uint64_t>(out, instances.size());
  auto list = [&](const std::vector<FeatureId>& v) {
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(v.size()));
    io::write_span<FeatureId>(out, v);
  };
  for (const auto& x : instances) {
    io::write_pod<std::uint32_t>(out, x.label);
    io::write_pod<std::uint32_t>(out, x.user);
    io::write_pod<std::uint32_t>(out, x.item);
    list(x.user_attrs);
    list(x.item_attrs);
    list(x.behaviors);
    list(x.context);
  }
}

std::vector<Instance> read_instances(std::istream& in) {
  io::expect_magic(in, "DGIS", "instances file");
  if (io::read_pod<std::uint32_t>(in) != 1) throw DataError("unsupported instances version");
  const auto n = io::read_pod<std::uint64_t>(in);
  std::vector<Instance> out(n);
  auto list = [&](std::vector<FeatureId>& v) {
    v.resize(io::read_pod<std::uint32_t>(in));
    io::read_into<FeatureId>(in, v);
  };
  for (auto& x : out) {
    x.label = static_cast<std::uint8_t>(io::read_pod<std::uint32_t>(in));
    x.user = io::read_pod<std::uint32_t>(in);
    x.item = io::read_pod<std::uint32_t>(in);
    list(x.user_attrs);
    list(x.item_attrs);
    list(x.behaviors);
    list(x.context);
  }
  return out;
}

void write_interactions(std::ostream& out, const InteractionMatrix& y) {
  io::write_magic(out, "DGYM");
  io::write_pod<std::uint32_t>(out, 1);
  io::write_pod(out, y.rows);
  io::write_pod(out, y.cols);
  io::write_pod<std::uint64_t>(out, y.nnz());
  io::write_span<std::uint64_t>(out, y.offsets);
  io::write_span<std::uint32_t>(out, y.columns);
}

InteractionMatrix read_interactions(std::istream& in) {
  io::expect_magic(in, "DGYM", "interaction matrix");
  if (io::read_pod<std::uint32_t>(in) != 1) throw DataError("unsupported Y version");
  InteractionMatrix y;
  y.rows = io::read_pod<std::uint32_t>(in);
  y.cols = io::read_pod<std::uint32_t>(in);
  const auto nnz = io::read_pod<std::uint64_t>(in);
  y.offsets.resize(y.rows + 1);
  y.columns.resize(nnz);
  io::read_into<std::uint64_t>(in, y.offsets);
  io::read_into<std::uint32_t>(in, y.columns);
  return y;
}

void save_bundle(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json vocab = dataset.vocabulary.to_json();
  vocab["user_attributes"] = dataset.user_attributes;
  vocab["item_attributes"] = dataset.item_attributes;
  vocab["clicked"] = dataset.clicked;
  vocab["stats"] = {{"retained_users", dataset.stats.retained_users},
                    {"dropped_users", dataset.stats.dropped_users},
                    {"negative_fallbacks", dataset.stats.negative_fallbacks}};
  std::ofstream(dir / "vocab.json") << vocab.dump(1) << '\n';

  const std::pair<const char*, const std::vector<Instance>*> splits[] = {
      {"instances.train.bin", &dataset.train},
      {"instances.val.bin", &dataset.val},
      {"instances.test.bin", &dataset.test}};
  for (const auto& [name, v] : splits) {
    std::ofstream out(dir / name, std::ios::binary);
    write_instances(out, *v);
  }
  std::ofstream y(dir / "Y.bin", std::ios::binary);
  write_interactions(y, dataset.interactions);
}

Dataset load_bundle(const std::filesystem::path& dir) {
  auto open = [&](const char* name) {
    std::ifstream in(dir / name, std::ios::binary);
    if (!in) throw MissingArtifact("dataset bundle not found: " + (dir / name).string());
    return in;
  };
  Dataset ds;
  {
    auto in = open("vocab.json");
    const auto j = nlohmann::json::parse(in);
    ds.vocabulary = FeatureVocabulary::from_json(j);
    ds.user_attributes = j.at("user_attributes").get<std::vector<std::vector<FeatureId>>>();
    ds.item_attributes = j.at("item_attributes").get<std::vector<std::vector<FeatureId>>>();
    ds.clicked = j.at("clicked").get<std::vector<std::vector<std::uint32_t>>>();
    const auto& st = j.at("stats");
    ds.stats.retained_users = st.at("retained_users").get<std::uint64_t>();
    ds.stats.dropped_users = st.at("dropped_users").get<std::uint64_t>();
    ds.stats.negative_fallbacks = st.at("negative_fallbacks").get<std::uint64_t>();
  }
  {
    auto in = open("instances.train.bin");
    ds.train = read_instances(in);
  }
  {
    auto in = open("instances.val.bin");
    ds.val = read_instances(in);
  }
  {
    auto in = open("instances.test.bin");
    ds.test = read_instances(in);
  }
  {
    auto in = open("Y.bin");
    ds.interactions = read_interactions(in);
  }
  return ds;
}

}  // namespace dgenn
